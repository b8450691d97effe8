"""
cli.py — FedSim Command Line
----------------------------
Subcommands:
    partition   split a dataset into Dirichlet client shards, print the ground truth
    run         one federation from a `federation` config → run record
    experiment  full scenario grid (MSM + FedRandom per cell) → records, reports, summary
    report      aggregate a directory of run records → metrics / convergence / traces

Data goes to stdout, diagnostics to stderr. Exit code 0 iff no errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

from analysis import CRITERIA, build_report, metric_table, render_csv, render_json, sample_table
from config import ConfigError, load_config, render_config
from data import DatasetSpec, PartitionSpec, build_dataset, dirichlet_partition, ground_truth_sizes, load_idx, partition_digest
from experiment import (
    FederationConfig, FederationError, RunRecord, ScenarioConfig, default_workers, run_federation, run_scenario,
)
from rng import STREAM_DATA, derive_seed
from utils_io import SCHEMA_VERSION, atomic_write_text, csv_text, scan_records, staged_directory, write_csv, write_yaml

log = logging.getLogger("fedsim")


def _setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="[%(levelname)s] %(message)s", stream=sys.stderr, force=True)


# ============================================================
# 1. PARTITION
# ============================================================
def _dataset_from_flags(args) -> DatasetSpec:
    if args.dataset == "synthetic":
        return DatasetSpec(
            name="synthetic", kind="synthetic", num_classes=args.classes or 4, input_dim=args.input_dim or 8,
            per_class_count=args.per_class, noise_sigma=args.noise,
        )
    if not (args.images and args.labels):
        raise ValueError("--dataset idx needs --images and --labels")
    probe = load_idx(args.images, args.labels)
    return DatasetSpec(
        name=Path(args.images).stem, kind="idx",
        num_classes=args.classes or int(probe.labels.max()) + 1,
        input_dim=args.input_dim or int(probe.features.shape[1]),
        images_path=str(args.images), labels_path=str(args.labels),
    )


def _cmd_partition(args) -> int:
    spec = _dataset_from_flags(args)
    ds = build_dataset(spec, derive_seed(args.seed, STREAM_DATA))
    pspec = PartitionSpec(num_clients=args.clients, alpha=args.alpha, seed=args.seed, min_shard=args.min_shard)
    parts = dirichlet_partition(ds, pspec)
    g = ground_truth_sizes(parts)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "partition",
        "dataset": spec.name,
        "records": len(ds),
        "num_clients": pspec.num_clients,
        "alpha": pspec.alpha,
        "seed": pspec.seed,
        "min_shard": pspec.min_shard,
        "digest": partition_digest(parts),
        "sizes": [p.size for p in parts],
        "ground_truth": [float(x) for x in g.shares],
        "clients": [{"client_id": p.client_id, "indices": [int(i) for i in p.indices]} for p in parts],
    }
    out = write_yaml(doc, args.out)
    log.info("Exported → %s", out)
    table = pd.DataFrame({
        "client_id": [p.client_id for p in parts],
        "size": [p.size for p in parts],
        "ground_truth": g.shares,
    })
    sys.stdout.write(csv_text(table))
    return 0


# ============================================================
# 2. RUN
# ============================================================
def _cmd_run(args) -> int:
    cfg = load_config(args.config, FederationConfig, kind="federation")
    record = run_federation(cfg)
    out = write_yaml(record.to_dict(), args.out)
    log.info("Exported → %s", out)
    return 0


# ============================================================
# 3. EXPERIMENT
# ============================================================
def _cmd_experiment(args) -> int:
    scenario = load_config(args.scenario, ScenarioConfig, kind="scenario")
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        raise ValueError("--workers must be >= 1")

    with staged_directory(args.out) as stage:
        result = run_scenario(scenario, workers)
        for sid, by_method in result.records.items():
            for method, recs in by_method.items():
                for rec in recs:
                    write_yaml(rec.to_dict(), stage / "records" / sid / f"{method}-{rec.cell['run']}.yaml")
        write_csv(result.rows, stage / "report.csv")
        all_records = [r for by_method in result.records.values() for recs in by_method.values() for r in recs]
        write_csv(sample_table(all_records), stage / "samples.csv")
        for crit in CRITERIA:
            write_csv(metric_table(result.rows, crit), stage / f"table_{crit}.csv")
        summary = {"schema_version": SCHEMA_VERSION, **result.summary.to_dict(),
                   "cell_rows": result.summary.cell_rows.to_dict(orient="records")}
        write_yaml(summary, stage / "summary.yaml")
        atomic_write_text(stage / "scenario.yaml", render_config(scenario, kind="scenario"))

    for name, s in result.summary.criteria.items():
        log.info("%s: FR wins %d / losses %d / ties %d, p=%s", name, s.wins, s.losses, s.ties,
                 "n/a" if s.p_value is None else f"{s.p_value:.4g}")
    log.info("Experiment written to %s", args.out)
    return 0


# ============================================================
# 4. REPORT
# ============================================================
def _cmd_report(args) -> int:
    good, bad = scan_records(args.input)
    records = []
    for path, data in good:
        try:
            records.append(RunRecord.from_dict(data))
        except ValueError as exc:
            bad.append((path, str(exc)))
    if bad:
        for path, reason in bad:
            log.error("corrupt record %s: %s", path, reason)
        return 1
    if not records:
        log.error("no records in %s", args.input)
        return 1

    bundle = build_report(records)
    text = render_csv(bundle) if args.format == "csv" else render_json(bundle)
    if args.out:
        log.info("Exported → %s", atomic_write_text(args.out, text))
    else:
        sys.stdout.write(text)
    return 0


# ============================================================
# 5. ENTRY POINT
# ============================================================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description="Federated contribution-valuation simulator")
    parser.add_argument("--verbose", action="store_true", help="Per-round debug logging")
    parser.add_argument("--quiet", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p_part = sub.add_parser("partition", help="Dirichlet split of a dataset into client shards")
    p_part.add_argument("--dataset", choices=["synthetic", "idx"], default="synthetic")
    p_part.add_argument("--images", type=str, default=None, help="IDX image file (idx only)")
    p_part.add_argument("--labels", type=str, default=None, help="IDX label file (idx only)")
    p_part.add_argument("--classes", type=int, default=None)
    p_part.add_argument("--input-dim", type=int, default=None)
    p_part.add_argument("--per-class", type=int, default=250)
    p_part.add_argument("--noise", type=float, default=1.0)
    p_part.add_argument("--clients", type=int, default=5)
    p_part.add_argument("--alpha", type=float, default=1.0)
    p_part.add_argument("--seed", type=int, default=0)
    p_part.add_argument("--min-shard", type=int, default=1)
    p_part.add_argument("--out", type=str, required=True)
    p_part.set_defaults(func=_cmd_partition)

    p_run = sub.add_parser("run", help="Run one federation from a config file")
    p_run.add_argument("config", type=str)
    p_run.add_argument("--out", type=str, required=True)
    p_run.set_defaults(func=_cmd_run)

    p_exp = sub.add_parser("experiment", help="Run a scenario grid")
    p_exp.add_argument("scenario", type=str)
    p_exp.add_argument("--out", type=str, required=True)
    p_exp.add_argument("--workers", type=int, default=None, help="Default: $FEDSIM_WORKERS or 1")
    p_exp.set_defaults(func=_cmd_experiment)

    p_rep = sub.add_parser("report", help="Aggregate a directory of run records")
    p_rep.add_argument("--in", dest="input", type=str, required=True)
    p_rep.add_argument("--format", choices=["csv", "json"], default="csv")
    p_rep.add_argument("--out", type=str, default=None, help="Optional output file (default stdout)")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose, args.quiet)
    try:
        return int(args.func(args))
    except ConfigError as exc:
        log.error("config %s", exc)
    except (FederationError, ValueError, OSError) as exc:
        log.error("%s", exc)
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
