"""
analysis.py — FedSim Contribution Metrics & Comparison
------------------------------------------------------
Quantitative side of the simulator: per-cell stability metrics over
contribution samples (average sample std, L2 / L∞ distance of the sample
mean to the size-based ground truth), the FedRandom-vs-MSM sign test,
pivot tables across the scenario grid, convergence checks and the
long-form tables behind accuracy traces and sample scatter plots.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import binomtest

from data import GroundTruth
from param_math import l2_dist, linf_dist
from shapley import ContributionVector, mean_vector
from strategies import MSM_POOL, StrategyKind
from utils_io import csv_text

REPORT_COLUMNS = [
    "scenario_id", "dataset", "alpha", "epochs", "seed", "method",
    "sample_count", "avg_std", "l2", "linf",
]
CRITERIA = ("avg_std", "l2", "linf")
METHOD_ORDER = {"MSM": 0, "FR": 1}


# ============================================================
# 1. SAMPLE METRICS
# ============================================================
@dataclass(frozen=True)
class MetricsReport:
    avg_std: float | None
    l2: float
    linf: float
    sample_count: int
    mean: tuple[float, ...] = ()

    def value(self, criterion: str) -> float | None:
        return getattr(self, criterion)


def sample_metrics(samples: Sequence[ContributionVector], g: GroundTruth) -> MetricsReport:
    """
    avg_std: mean over clients of the Bessel-corrected std of that client's
    share across samples (None with fewer than two samples).
    l2 / linf: distance of the per-client sample mean to g.
    """
    if not samples:
        raise ValueError("no contribution samples")
    n = g.shares.shape[0]
    if any(s.n != n for s in samples):
        raise ValueError(f"dimension mismatch: ground truth has {n} clients")
    stacked = np.vstack([s.shares for s in samples])
    avg_std = float(stacked.std(axis=0, ddof=1).mean()) if len(samples) >= 2 else None
    mean = mean_vector(samples).shares
    return MetricsReport(
        avg_std=avg_std,
        l2=l2_dist(mean, g.shares),
        linf=linf_dist(mean, g.shares),
        sample_count=len(samples),
        mean=tuple(float(x) for x in mean),
    )


# ============================================================
# 2. REPORT ROWS
# ============================================================
def _group_key(rec) -> tuple:
    c = rec.cell
    return (str(c["dataset"]), float(c["alpha"]), int(c["epochs"]), int(c["seed"]),
            METHOD_ORDER.get(c["method"], 9), str(c["scenario_id"]))


def group_records(records: Iterable) -> dict[tuple[str, str], list]:
    """(scenario_id, method) → records sorted by run, groups in grid order."""
    groups: dict[tuple[str, str], list] = {}
    for rec in sorted(records, key=lambda r: (_group_key(r), int(r.cell["run"]))):
        groups.setdefault((rec.cell["scenario_id"], rec.cell["method"]), []).append(rec)
    return groups


def report_rows(records: Iterable) -> pd.DataFrame:
    """One ReportRow per (cell, method), columns fixed as REPORT_COLUMNS."""
    rows = []
    for (sid, method), recs in group_records(records).items():
        truths = {r.ground_truth for r in recs}
        if len(truths) != 1:
            raise ValueError(f"{sid}/{method}: samples disagree on the ground truth")
        g = GroundTruth(np.asarray(recs[0].ground_truth, dtype=np.float64))
        m = sample_metrics([r.contribution_vector for r in recs], g)
        c = recs[0].cell
        rows.append({
            "scenario_id": sid, "dataset": c["dataset"], "alpha": float(c["alpha"]),
            "epochs": int(c["epochs"]), "seed": int(c["seed"]), "method": method,
            "sample_count": m.sample_count,
            "avg_std": math.nan if m.avg_std is None else m.avg_std,
            "l2": m.l2, "linf": m.linf,
        })
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def reports_from_rows(rows: pd.DataFrame, method: str) -> dict[str, MetricsReport]:
    """Rebuild per-cell MetricsReports of one method from report rows (e.g. a re-read CSV)."""
    out = {}
    for r in rows[rows["method"] == method].itertuples(index=False):
        avg_std = None if pd.isna(r.avg_std) else float(r.avg_std)
        out[str(r.scenario_id)] = MetricsReport(avg_std, float(r.l2), float(r.linf), int(r.sample_count))
    return out


# ============================================================
# 3. FEDRANDOM VS MSM
# ============================================================
@dataclass(frozen=True)
class CriterionStats:
    criterion: str
    wins: int
    losses: int
    ties: int
    p_value: float | None
    min_factor: float | None
    median_factor: float | None
    reduced_by_third: int

    @property
    def decided(self) -> int:
        return self.wins + self.losses


@dataclass(frozen=True)
class ComparisonSummary:
    cells: tuple[str, ...]
    criteria: dict[str, CriterionStats]
    cell_rows: pd.DataFrame = field(compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "comparison_summary",
            "cells": len(self.cells),
            "criteria": {
                name: {
                    "wins": s.wins, "losses": s.losses, "ties": s.ties,
                    "win_rate": s.wins / len(self.cells) if self.cells else None,
                    "p_value": s.p_value, "min_factor": s.min_factor,
                    "median_factor": s.median_factor, "reduced_by_third": s.reduced_by_third,
                }
                for name, s in self.criteria.items()
            },
        }


def sign_test(wins: int, losses: int) -> float | None:
    """One-sided exact binomial test, H1: FR wins with probability > 1/2. Ties already dropped."""
    if wins + losses == 0:
        return None
    return float(binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)


def _factor(msm: float, fr: float) -> float:
    if fr > 0:
        return msm / fr
    return math.inf if msm > 0 else 1.0


def compare(
    msm_reports: Mapping[str, MetricsReport], fr_reports: Mapping[str, MetricsReport]
) -> ComparisonSummary:
    """
    Per criterion, count cells where FR is strictly lower than MSM. A cell
    where either side is absent (fewer than two samples) counts as a tie.
    """
    if set(msm_reports) != set(fr_reports):
        missing = sorted(set(msm_reports) ^ set(fr_reports))
        raise ValueError(f"unpaired scenario cells: {missing}")
    cells = tuple(msm_reports)
    stats, table = {}, []
    for crit in CRITERIA:
        wins = losses = ties = third = 0
        factors = []
        for cid in cells:
            a, b = msm_reports[cid].value(crit), fr_reports[cid].value(crit)
            if a is None or b is None or a == b:
                ties += 1
                winner = "tie"
            elif b < a:
                wins += 1
                winner = "FR"
            else:
                losses += 1
                winner = "MSM"
            if a is not None and b is not None:
                factors.append(_factor(a, b))
                third += b < a * 2.0 / 3.0
            table.append({"scenario_id": cid, "criterion": crit, "msm": a, "fr": b, "winner": winner})
        stats[crit] = CriterionStats(
            crit, wins, losses, ties, sign_test(wins, losses),
            min(factors) if factors else None,
            float(np.median(factors)) if factors else None,
            int(third),
        )
    cell_rows = pd.DataFrame(table, columns=["scenario_id", "criterion", "msm", "fr", "winner"])
    return ComparisonSummary(cells, stats, cell_rows)


# ============================================================
# 4. TABLES
# ============================================================
def metric_table(rows: pd.DataFrame, criterion: str) -> pd.DataFrame:
    """(method, epochs) × (dataset, alpha) pivot, averaged over seeds."""
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; choose from {list(CRITERIA)}")
    pivot = rows.pivot_table(
        index=["method", "epochs"], columns=["dataset", "alpha"], values=criterion, aggfunc="mean",
    )
    pivot = pivot.reindex(sorted(pivot.index, key=lambda k: (METHOD_ORDER.get(k[0], 9), k[1])))
    pivot.columns = [f"{ds}/a{alpha:g}" for ds, alpha in pivot.columns]
    return pivot.reset_index()


def strategy_label(rec) -> str:
    """MSM runs are labelled by their server rule, FedRandom runs by the meta-strategy."""
    if rec.cell.get("method") == "FR":
        return StrategyKind.FEDRANDOM.value
    return rec.rounds[0].strategy


def _threshold_for(rec) -> float:
    num_classes = rec.config.get("arch", {}).get("num_classes", 2) if rec.config else 2
    return 2.0 / num_classes


def convergence_summary(records: Iterable, threshold: float | None = None) -> pd.DataFrame:
    """
    Per strategy label: run count, final accuracy (mean and worst) and the
    slowest first round reaching `threshold` (default: twice the
    random-guess accuracy). `rounds_to_threshold` is NaN if any run never gets there.
    """
    records = list(records)
    order = {k.value: i for i, k in enumerate((*MSM_POOL, StrategyKind.FEDRANDOM))}
    by_label: dict[str, list] = {}
    for rec in records:
        by_label.setdefault(strategy_label(rec), []).append(rec)

    rows = []
    for label in sorted(by_label, key=lambda s: (order.get(s, len(order)), s)):
        recs = by_label[label]
        thr = threshold if threshold is not None else _threshold_for(recs[0])
        finals = [r.rounds[-1].accuracy for r in recs]
        firsts = [next((e.round for e in r.rounds if e.accuracy >= thr), None) for r in recs]
        rows.append({
            "strategy": label, "runs": len(recs), "threshold": thr,
            "final_accuracy_mean": float(np.mean(finals)),
            "final_accuracy_min": float(min(finals)),
            "rounds_to_threshold": math.nan if None in firsts else int(max(firsts)),
            "reached_all": None not in firsts,
        })
    return pd.DataFrame(rows, columns=[
        "strategy", "runs", "threshold", "final_accuracy_mean", "final_accuracy_min",
        "rounds_to_threshold", "reached_all",
    ])


def traces_table(records: Iterable) -> pd.DataFrame:
    """Long-form per-round validation accuracy and loss, one row per (run, round)."""
    rows = [
        {"scenario_id": rec.cell["scenario_id"], "method": rec.cell["method"], "run": int(rec.cell["run"]),
         "strategy": e.strategy, "round": e.round, "accuracy": e.accuracy, "loss": e.loss}
        for recs in group_records(records).values() for rec in recs for e in rec.rounds
    ]
    return pd.DataFrame(rows, columns=["scenario_id", "method", "run", "strategy", "round", "accuracy", "loss"])


def sample_table(records: Iterable) -> pd.DataFrame:
    """Every contribution sample, one row per (run, client)."""
    rows = [
        {"scenario_id": rec.cell["scenario_id"], "method": rec.cell["method"], "run": int(rec.cell["run"]),
         "client": i, "share": share, "ground_truth": rec.ground_truth[i]}
        for recs in group_records(records).values() for rec in recs
        for i, share in enumerate(rec.contributions)
    ]
    return pd.DataFrame(rows, columns=["scenario_id", "method", "run", "client", "share", "ground_truth"])


# ============================================================
# 5. REPORT BUNDLE
# ============================================================
@dataclass(frozen=True, eq=False)
class ReportBundle:
    metrics: pd.DataFrame
    convergence: pd.DataFrame
    traces: pd.DataFrame


def build_report(records: Iterable, threshold: float | None = None) -> ReportBundle:
    records = list(records)
    if not records:
        raise ValueError("no records")
    return ReportBundle(report_rows(records), convergence_summary(records, threshold), traces_table(records))


def render_csv(bundle: ReportBundle) -> str:
    """Metrics, convergence and traces tables, separated by one blank line."""
    return "\n".join(csv_text(df) for df in (bundle.metrics, bundle.convergence, bundle.traces))


def _records_for_json(df: pd.DataFrame) -> list[dict]:
    out = []
    for row in df.to_dict(orient="records"):
        out.append({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()})
    return out


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def render_json(bundle: ReportBundle) -> str:
    payload = {
        "metrics": _records_for_json(bundle.metrics),
        "convergence": _records_for_json(bundle.convergence),
        "traces": _records_for_json(bundle.traces),
    }
    return json.dumps(payload, indent=2, allow_nan=False, default=_json_default) + "\n"
