"""
utils_io.py — FedSim File Handling
----------------------------------
Persistence helpers for configs, run records and reports: YAML with
lossless 17-significant-digit floats, CSV via pandas, atomic
write-temp-then-rename, staged output directories, and a tolerant
record-directory loader that reports corrupt files instead of dying.
"""

from __future__ import annotations

import contextlib
import logging
import math
import os
import shutil
import tempfile
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import pandas as pd
import yaml

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.17g"


# ============================================================
# 1. YAML WITH LOSSLESS FLOATS
# ============================================================
def format_float(x: float) -> str:
    """17 significant digits, always re-parseable as a YAML float."""
    if math.isnan(x):
        return ".nan"
    if math.isinf(x):
        return ".inf" if x > 0 else "-.inf"
    s = format(x, ".17g")
    mantissa, _, exponent = s.partition("e")
    if "." not in mantissa:
        mantissa += ".0"
    return f"{mantissa}e{exponent}" if exponent else mantissa


class _Dumper(yaml.SafeDumper):
    pass


def _represent_float(dumper, value):
    return dumper.represent_scalar("tag:yaml.org,2002:float", format_float(float(value)))


def _represent_np_int(dumper, value):
    return dumper.represent_int(int(value))


_Dumper.add_representer(float, _represent_float)
_Dumper.add_representer(np.float64, _represent_float)
_Dumper.add_representer(np.int64, _represent_np_int)


def dump_yaml(data: Any) -> str:
    return yaml.dump(
        data, Dumper=_Dumper, sort_keys=False, allow_unicode=True,
        default_flow_style=None, width=100,
    )


def load_yaml(path: str | Path) -> Any:
    return yaml.safe_load(Path(path).read_text(encoding="utf-8"))


# ============================================================
# 2. ATOMIC WRITES
# ============================================================
def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write to a sibling temp file, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise
    return path


def csv_text(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_csv(df: pd.DataFrame, path: str | Path) -> Path:
    out = atomic_write_text(path, csv_text(df))
    log.info("Exported → %s", out)
    return out


def write_yaml(data: Any, path: str | Path) -> Path:
    return atomic_write_text(path, dump_yaml(data))


@contextlib.contextmanager
def staged_directory(target: str | Path) -> Iterator[Path]:
    """
    Yield a scratch directory next to `target`. On success its contents are
    moved into `target`; on any failure the scratch directory is removed and
    `target` is left as it was.
    """
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{target.name}.", suffix=".partial", dir=target.parent))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if not target.exists():
        os.replace(stage, target)
        return
    for entry in sorted(stage.iterdir()):
        dest = target / entry.name
        if dest.is_dir() and not dest.is_symlink():
            shutil.rmtree(dest)
        os.replace(entry, dest)
    shutil.rmtree(stage, ignore_errors=True)


# ============================================================
# 3. RECORD DISCOVERY
# ============================================================
def check_record(data) -> dict:
    """Validate the schema tag of a loaded record mapping."""
    if not isinstance(data, dict):
        raise ValueError("not a mapping")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {data.get('schema_version')!r}")
    if data.get("kind") != "run_record":
        raise ValueError(f"not a run record (kind={data.get('kind')!r})")
    return data


def scan_records(directory: str | Path) -> tuple[list[tuple[Path, dict]], list[tuple[Path, str]]]:
    """
    Read every *.yaml under `directory` that claims to be a run record.
    Returns (good, bad) where bad lists (path, reason). Files with another
    `kind` (summaries, scenario echoes) are skipped silently.
    """
    good, bad = [], []
    for path in sorted(Path(directory).rglob("*.yaml")):
        try:
            data = load_yaml(path)
        except (yaml.YAMLError, OSError, UnicodeDecodeError) as exc:
            bad.append((path, f"unreadable: {exc}"))
            continue
        if isinstance(data, dict) and data.get("kind") not in (None, "run_record"):
            continue
        try:
            good.append((path, check_record(data)))
        except ValueError as exc:
            bad.append((path, str(exc)))
    return good, bad
