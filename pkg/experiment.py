"""
experiment.py — FedSim Federation Runner & Sampling Pipeline
------------------------------------------------------------
Deterministic federation loop with per-round Shapley valuation, the two
contribution samplers (MSM: one federation per pool strategy; FedRandom:
K randomised federations), and the scenario grid executor that runs
every (dataset, alpha, epochs, seed) cell over a process pool and merges
results in a fixed key order.
"""

from __future__ import annotations

import hashlib
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Literal, Sequence

import numpy as np
import pandas as pd

from analysis import ComparisonSummary, compare, report_rows, reports_from_rows
from config import config_digest, to_mapping
from data import (
    ClientDataset, Dataset, DatasetSpec, GroundTruth, PartitionSpec, build_dataset,
    dirichlet_partition, ground_truth_sizes, holdout_split, partition_digest,
)
from model import LocalTrainConfig, ModelArch, evaluate, init_params, train_local
from rng import (
    STREAM_CELL, STREAM_DATA, STREAM_HOLDOUT, STREAM_INIT, STREAM_PARTITION, STREAM_SHAPLEY,
    STREAM_TRAIN, derive_seed, splitmix64,
)
from shapley import ContributionVector, RoundShapley, ShapleySpec, accumulate_normalize, mean_vector, round_shapley
from strategies import (
    FEDRANDOM_POOL, MSM_POOL, ClientUpdate, FedRandomSpec, StrategyHyper, StrategyKind, StrategyState,
    aggregate, fedrandom_aggregate, fresh_states,
)
from utils_io import SCHEMA_VERSION

log = logging.getLogger(__name__)

WORKERS_ENV = "FEDSIM_WORKERS"
CELL_KEYS = ("scenario_id", "dataset", "alpha", "epochs", "seed", "method", "run")


class FederationError(RuntimeError):
    """A component failure inside a federation, tagged with cell and round."""


# ============================================================
# 1. CONFIGURATION TYPES
# ============================================================
@dataclass(frozen=True)
class FederationConfig:
    dataset: DatasetSpec = DatasetSpec()
    arch: ModelArch = ModelArch()
    rounds: int = 20
    local: LocalTrainConfig = LocalTrainConfig()
    strategy: StrategyKind = StrategyKind.FEDAVG
    hyper: StrategyHyper = StrategyHyper()
    fedrandom: FedRandomSpec = FedRandomSpec()
    shapley: ShapleySpec = ShapleySpec()
    partition: PartitionSpec = PartitionSpec()
    val_frac: float = 0.2
    master_seed: int = 42
    run_seed: int | None = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if not 0.0 < self.val_frac < 1.0:
            raise ValueError(f"val_frac must lie in (0, 1), got {self.val_frac}")
        if self.arch.input_dim != self.dataset.input_dim:
            raise ValueError(f"arch.input_dim={self.arch.input_dim} but dataset.input_dim={self.dataset.input_dim}")
        if self.arch.num_classes != self.dataset.num_classes:
            raise ValueError(f"arch.num_classes={self.arch.num_classes} but dataset.num_classes={self.dataset.num_classes}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @property
    def effective_run_seed(self) -> int:
        return self.master_seed if self.run_seed is None else self.run_seed


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "desk"
    datasets: tuple[DatasetSpec, ...] = (DatasetSpec(),)
    alphas: tuple[float, ...] = (1.0, 10.0, 100.0)
    epochs: tuple[int, ...] = (1, 2)
    seeds: tuple[int, ...] = (0, 1, 2)
    msm_pool: tuple[StrategyKind, ...] = MSM_POOL
    fedrandom: FedRandomSpec = FedRandomSpec()
    fedrandom_runs: int = 10
    rounds: int = 20
    num_clients: int = 5
    min_shard: int = 10
    val_frac: float = 0.2
    master_seed: int = 42
    arch_kind: Literal["logistic", "mlp1"] = "logistic"
    hidden_dim: int = 16
    learning_rate: float = 0.1
    batch_size: int = 32
    hyper: StrategyHyper = StrategyHyper()
    shapley: ShapleySpec = ShapleySpec()

    def __post_init__(self):
        if not (self.datasets and self.alphas and self.epochs and self.seeds):
            raise ValueError("scenario grid must not be empty")
        if not self.msm_pool:
            raise ValueError("msm_pool must not be empty")
        if StrategyKind.FEDRANDOM in self.msm_pool:
            raise ValueError("msm_pool holds base strategies only")
        if self.fedrandom_runs < 1:
            raise ValueError("fedrandom_runs must be >= 1")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ValueError("dataset names must be unique")


# ============================================================
# 2. RUN RECORD
# ============================================================
@dataclass(frozen=True)
class RoundEntry:
    round: int
    strategy: str
    accuracy: float
    loss: float
    phi: tuple[float, ...]
    v_full: float
    v_empty: float


@dataclass(frozen=True)
class RunRecord:
    config: dict = field(compare=False, hash=False)
    config_digest: str
    cell: dict = field(hash=False)
    client_sizes: tuple[int, ...]
    ground_truth: tuple[float, ...]
    partition_digest: str
    client_seed_digest: str
    rounds: tuple[RoundEntry, ...]
    contributions: tuple[float, ...]

    @property
    def accuracy_trace(self) -> tuple[float, ...]:
        return tuple(r.accuracy for r in self.rounds)

    @property
    def choices(self) -> tuple[str, ...]:
        return tuple(r.strategy for r in self.rounds)

    @property
    def contribution_vector(self) -> ContributionVector:
        return ContributionVector(np.asarray(self.contributions, dtype=np.float64))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "run_record",
            "config_digest": self.config_digest,
            "cell": dict(self.cell),
            "client_sizes": list(self.client_sizes),
            "ground_truth": list(self.ground_truth),
            "partition_digest": self.partition_digest,
            "client_seed_digest": self.client_seed_digest,
            "contributions": list(self.contributions),
            "accuracy_trace": list(self.accuracy_trace),
            "rounds": [
                {
                    "round": r.round, "strategy": r.strategy, "accuracy": r.accuracy, "loss": r.loss,
                    "phi": list(r.phi), "v_full": r.v_full, "v_empty": r.v_empty,
                }
                for r in self.rounds
            ],
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        try:
            rounds = tuple(
                RoundEntry(
                    round=int(r["round"]), strategy=str(r["strategy"]), accuracy=float(r["accuracy"]),
                    loss=float(r["loss"]), phi=tuple(float(x) for x in r["phi"]),
                    v_full=float(r["v_full"]), v_empty=float(r["v_empty"]),
                )
                for r in d["rounds"]
            )
            rec = cls(
                config=d.get("config", {}),
                config_digest=str(d["config_digest"]),
                cell=dict(d["cell"]),
                client_sizes=tuple(int(x) for x in d["client_sizes"]),
                ground_truth=tuple(float(x) for x in d["ground_truth"]),
                partition_digest=str(d["partition_digest"]),
                client_seed_digest=str(d["client_seed_digest"]),
                rounds=rounds,
                contributions=tuple(float(x) for x in d["contributions"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed run record: missing or bad field {exc}") from exc
        missing = [k for k in CELL_KEYS if k not in rec.cell]
        if missing:
            raise ValueError(f"malformed run record: cell lacks {', '.join(missing)}")
        if len(rec.contributions) != len(rec.client_sizes):
            raise ValueError("malformed run record: contribution/client count mismatch")
        rec.contribution_vector  # validates shares
        return rec


# ============================================================
# 3. FEDERATION
# ============================================================
@dataclass(frozen=True, eq=False)
class FederationData:
    train: Dataset
    validation: Dataset
    parts: list[ClientDataset]
    ground_truth: GroundTruth


def prepare_data(cfg: FederationConfig) -> FederationData:
    """Dataset, holdout and partition; depends only on data-side config and master_seed."""
    ds = build_dataset(cfg.dataset, derive_seed(cfg.master_seed, STREAM_DATA))
    train, validation = holdout_split(ds, cfg.val_frac, derive_seed(cfg.master_seed, STREAM_HOLDOUT))
    spec = replace(cfg.partition, seed=derive_seed(cfg.master_seed, STREAM_PARTITION, cfg.partition.seed))
    parts = dirichlet_partition(train, spec)
    return FederationData(train, validation, parts, ground_truth_sizes(parts))


def client_seed(cfg: FederationConfig, round_index: int, client_id: int) -> int:
    return derive_seed(cfg.master_seed, STREAM_TRAIN, cfg.local.seed, round_index, client_id)


def _client_seed_digest(cfg: FederationConfig, client_ids: Sequence[int]) -> str:
    h = hashlib.sha256()
    for t in range(1, cfg.rounds + 1):
        for cid in client_ids:
            h.update(struct.pack(">Q", client_seed(cfg, t, cid)))
    return h.hexdigest()


def run_federation(
    cfg: FederationConfig, data: FederationData | None = None, cell: dict | None = None
) -> RunRecord:
    """
    Partition, initialise, then for t = 1..r: local training in client order,
    Shapley valuation against the incoming global, server aggregation
    (FedRandom draws its member here), validation. Bit-identical for equal configs.
    """
    data = data or prepare_data(cfg)
    arch = cfg.arch
    cell = dict(cell or {
        "scenario_id": "single", "dataset": cfg.dataset.name, "alpha": cfg.partition.alpha,
        "epochs": cfg.local.epochs, "seed": cfg.partition.seed, "method": cfg.strategy.value, "run": 0,
    })
    where = f"cell {cell.get('scenario_id')}"
    global_params = init_params(arch, derive_seed(cfg.master_seed, STREAM_INIT))
    state = StrategyState()
    states = fresh_states(cfg.fedrandom.pool)
    rounds: list[RoundEntry] = []
    shapleys: list[RoundShapley] = []

    for t in range(1, cfg.rounds + 1):
        try:
            updates = [
                ClientUpdate(
                    c.client_id,
                    train_local(global_params, c.data, cfg.local.with_seed(client_seed(cfg, t, c.client_id)), arch),
                    c.size,
                )
                for c in data.parts
            ]
            rs = round_shapley(
                global_params, updates, data.validation, arch, cfg.shapley,
                seed=derive_seed(cfg.master_seed, STREAM_SHAPLEY, t), round_index=t,
            )
            if cfg.strategy == StrategyKind.FEDRANDOM:
                round_seed = splitmix64(cfg.effective_run_seed ^ t)
                global_params, states, chosen = fedrandom_aggregate(
                    cfg.hyper, states, global_params, updates, round_seed, cfg.fedrandom
                )
            else:
                global_params, state = aggregate(cfg.strategy, cfg.hyper, state, global_params, updates)
                chosen = cfg.strategy
            ev = evaluate(global_params, data.validation, arch)
        except (ValueError, FloatingPointError) as exc:
            raise FederationError(f"{where}, round {t}: {exc}") from exc

        shapleys.append(rs)
        rounds.append(RoundEntry(
            round=t, strategy=chosen.value, accuracy=ev.accuracy, loss=ev.loss,
            phi=tuple(float(x) for x in rs.phi), v_full=rs.v_full, v_empty=rs.v_empty,
        ))
        log.debug("%s round %d: %s acc=%.4f", where, t, chosen.value, ev.accuracy)

    contributions = accumulate_normalize(shapleys, cfg.shapley.normalize, cfg.shapley.negatives)
    log.info("Federation %s/%s-%s done: acc=%.4f", cell.get("scenario_id"), cell.get("method"),
             cell.get("run"), rounds[-1].accuracy)
    return RunRecord(
        config=to_mapping(cfg),
        config_digest=config_digest(cfg),
        cell=cell,
        client_sizes=tuple(c.size for c in data.parts),
        ground_truth=tuple(float(x) for x in data.ground_truth.shares),
        partition_digest=partition_digest(data.parts),
        client_seed_digest=_client_seed_digest(cfg, [c.client_id for c in data.parts]),
        rounds=tuple(rounds),
        contributions=tuple(float(x) for x in contributions.shares),
    )


# ============================================================
# 4. CELLS, JOBS & SAMPLERS
# ============================================================
@dataclass(frozen=True)
class Cell:
    scenario_id: str
    dataset: str
    alpha: float
    epochs: int
    seed: int
    base: FederationConfig

    def meta(self, method: str, run: int) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id, "dataset": self.dataset, "alpha": self.alpha,
            "epochs": self.epochs, "seed": self.seed, "method": method, "run": run,
        }


@dataclass(frozen=True)
class Job:
    cell: Cell
    method: Literal["MSM", "FR"]
    run: int
    cfg: FederationConfig


def run_job(job: Job) -> RunRecord:
    return run_federation(job.cfg, cell=job.cell.meta(job.method, job.run))


def build_cells(scenario: ScenarioConfig) -> list[Cell]:
    """One cell per (dataset, alpha, epochs, seed), in that nesting order."""
    cells = []
    for ds in scenario.datasets:
        arch = ModelArch(scenario.arch_kind, ds.input_dim, ds.num_classes, scenario.hidden_dim)
        for alpha in scenario.alphas:
            for e in scenario.epochs:
                for seed in scenario.seeds:
                    base = FederationConfig(
                        dataset=ds, arch=arch, rounds=scenario.rounds,
                        local=LocalTrainConfig(e, scenario.learning_rate, scenario.batch_size, 0),
                        strategy=StrategyKind.FEDAVG, hyper=scenario.hyper, fedrandom=scenario.fedrandom,
                        shapley=scenario.shapley,
                        partition=PartitionSpec(scenario.num_clients, alpha, 0, scenario.min_shard),
                        val_frac=scenario.val_frac,
                        master_seed=derive_seed(scenario.master_seed, STREAM_CELL, seed),
                    )
                    cells.append(Cell(f"{ds.name}-a{alpha:g}-e{e}-s{seed}", ds.name, alpha, e, seed, base))
    return cells


def msm_jobs(cell: Cell, pool: Sequence[StrategyKind] = MSM_POOL) -> list[Job]:
    """Same data, same client seeds; only the server rule changes."""
    return [Job(cell, "MSM", j, replace(cell.base, strategy=StrategyKind(k))) for j, k in enumerate(pool)]


def fedrandom_jobs(cell: Cell, runs: int, pool: Sequence[StrategyKind] = FEDRANDOM_POOL) -> list[Job]:
    if runs < 1:
        raise ValueError("need at least one FedRandom run")
    fr = replace(cell.base.fedrandom, pool=tuple(pool))
    return [
        Job(cell, "FR", k, replace(cell.base, strategy=StrategyKind.FEDRANDOM, fedrandom=fr,
                                   run_seed=splitmix64(cell.base.master_seed ^ k)))
        for k in range(runs)
    ]


@dataclass(frozen=True)
class SampleSet:
    records: tuple[RunRecord, ...]
    samples: tuple[ContributionVector, ...]
    mean: ContributionVector

    @classmethod
    def from_records(cls, records: Sequence[RunRecord]) -> "SampleSet":
        samples = tuple(r.contribution_vector for r in records)
        return cls(tuple(records), samples, mean_vector(samples))


def run_msm(cell: Cell, pool: Sequence[StrategyKind] = MSM_POOL) -> SampleSet:
    return SampleSet.from_records([run_job(j) for j in msm_jobs(cell, pool)])


def run_fedrandom_samples(cell: Cell, runs: int, pool: Sequence[StrategyKind] | None = None) -> SampleSet:
    pool = pool or cell.base.fedrandom.pool
    return SampleSet.from_records([run_job(j) for j in fedrandom_jobs(cell, runs, pool)])


# ============================================================
# 5. SCENARIO EXECUTION
# ============================================================
@dataclass(frozen=True)
class ScenarioResult:
    cells: tuple[Cell, ...]
    records: dict[str, dict[str, tuple[RunRecord, ...]]]
    rows: pd.DataFrame = field(compare=False)
    summary: ComparisonSummary = field(compare=False)


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _execute(jobs: list[Job], workers: int) -> list[RunRecord]:
    if workers <= 1 or len(jobs) <= 1:
        return [run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_job, jobs, chunksize=1))


def run_scenario(scenario: ScenarioConfig, workers: int = 1) -> ScenarioResult:
    """MSM + K FedRandom federations per cell; merged by (cell, method, run)."""
    cells = build_cells(scenario)
    jobs: list[Job] = []
    for cell in cells:
        jobs += msm_jobs(cell, scenario.msm_pool)
        jobs += fedrandom_jobs(cell, scenario.fedrandom_runs, scenario.fedrandom.pool)
    log.info("Scenario %s: %d cells, %d federations, %d worker(s)", scenario.name, len(cells), len(jobs), workers)

    results = _execute(jobs, workers)
    # jobs are built cell by cell, MSM before FR, runs ascending; map keeps that order
    merged: dict[str, dict[str, list[RunRecord]]] = {c.scenario_id: {"MSM": [], "FR": []} for c in cells}
    for job, rec in zip(jobs, results):
        merged[job.cell.scenario_id][job.method].append(rec)

    for sid, by_method in merged.items():
        digests = {r.partition_digest for recs in by_method.values() for r in recs}
        seeds = {r.client_seed_digest for recs in by_method.values() for r in recs}
        if len(digests) != 1 or len(seeds) != 1:
            raise FederationError(f"cell {sid}: runs did not share partition and client seeds")

    records = {sid: {m: tuple(v) for m, v in by_method.items()} for sid, by_method in merged.items()}
    all_records = [r for by_method in records.values() for recs in by_method.values() for r in recs]
    rows = report_rows(all_records)
    summary = compare_rows(rows)
    return ScenarioResult(tuple(cells), records, rows, summary)


def compare_rows(rows: pd.DataFrame) -> ComparisonSummary:
    return compare(reports_from_rows(rows, "MSM"), reports_from_rows(rows, "FR"))
