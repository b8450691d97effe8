"""
shapley.py — FedSim Multi-Round Reconstruction Shapley Values
-------------------------------------------------------------
Per-round valuation of client updates. A coalition's value is the
validation utility of the model reconstructed from that coalition's
submitted parameters (size-weighted average); the empty coalition is
worth the incoming global model. Exact subset-weight enumeration for
small federations, seeded Monte-Carlo permutation sampling otherwise,
then multi-round accumulation and normalisation into shares.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from model import ModelArch, evaluate
from param_math import ParamVec, weighted_sum
from rng import generator
from strategies import ClientUpdate

log = logging.getLogger(__name__)

EXACT_CLIENT_CAP = 16


# ============================================================
# 1. TYPES
# ============================================================
@dataclass(frozen=True)
class ShapleySpec:
    mode: Literal["exact", "mc"] = "exact"
    mc_perms: int = 200
    utility: Literal["accuracy", "neg_loss"] = "accuracy"
    normalize: Literal["end", "per_round"] = "end"
    negatives: Literal["clamp", "shift"] = "clamp"
    max_exact_clients: int = EXACT_CLIENT_CAP

    def __post_init__(self):
        if self.mode not in ("exact", "mc"):
            raise ValueError(f"unknown Shapley mode {self.mode!r}")
        if self.utility not in ("accuracy", "neg_loss"):
            raise ValueError(f"unknown utility {self.utility!r}")
        if self.normalize not in ("end", "per_round"):
            raise ValueError(f"unknown normalize option {self.normalize!r}")
        if self.negatives not in ("clamp", "shift"):
            raise ValueError(f"unknown negatives option {self.negatives!r}")
        if self.mc_perms < 1:
            raise ValueError("mc_perms must be >= 1")
        if self.max_exact_clients < 1:
            raise ValueError("max_exact_clients must be >= 1")


@dataclass(frozen=True, eq=False)
class RoundShapley:
    phi: np.ndarray
    round_index: int
    v_full: float = math.nan
    v_empty: float = math.nan

    @property
    def n(self) -> int:
        return int(self.phi.shape[0])


@dataclass(frozen=True, eq=False)
class ContributionVector:
    shares: np.ndarray

    def __post_init__(self):
        c = self.shares
        if c.ndim != 1 or c.shape[0] < 1:
            raise ValueError("contribution vector needs at least one client")
        if np.any(c < 0) or abs(float(c.sum()) - 1.0) > 1e-12:
            raise ValueError(f"contribution shares must be non-negative and sum to 1: {c.tolist()}")

    @property
    def n(self) -> int:
        return int(self.shares.shape[0])


RoundValueTable = dict  # bitmask -> utility


# ============================================================
# 2. COALITION UTILITY
# ============================================================
def _members(mask: int, n: int) -> list[int]:
    return [i for i in range(n) if mask >> i & 1]


def _utility(params: ParamVec, val_set, arch: ModelArch, utility: str) -> float:
    res = evaluate(params, val_set, arch)
    return res.accuracy if utility == "accuracy" else -res.loss


def reconstruct_utility(
    prev_global: ParamVec,
    updates: Sequence[ClientUpdate],
    subset: int,
    val_set,
    arch: ModelArch,
    utility: str = "accuracy",
) -> float:
    """
    Utility of the coalition encoded by `subset` (bit i = i-th update in
    client-id order). Empty coalition → prev_global; otherwise the
    size-weighted average of the members' parameters.
    """
    if len(getattr(val_set, "data", val_set)) == 0:
        raise ValueError("empty validation set")
    if subset == 0:
        return _utility(prev_global, val_set, arch, utility)
    ups = sorted(updates, key=lambda u: u.client_id)
    chosen = [ups[i] for i in _members(subset, len(ups))]
    total = float(sum(u.n_i for u in chosen))
    rebuilt = weighted_sum([u.params for u in chosen], [u.n_i / total for u in chosen])
    return _utility(rebuilt, val_set, arch, utility)


class LazyValueTable:
    """Memoised coalition utility; `eager()` fills every one of the 2^n entries."""

    def __init__(self, value_fn: Callable[[int], float], n: int):
        self.value_fn = value_fn
        self.n = n
        self.table: RoundValueTable = {}

    def __call__(self, mask: int) -> float:
        if mask not in self.table:
            self.table[mask] = float(self.value_fn(mask))
        return self.table[mask]

    def eager(self) -> RoundValueTable:
        for mask in range(1 << self.n):
            self(mask)
        return dict(sorted(self.table.items()))


# ============================================================
# 3. SHAPLEY ESTIMATORS
# ============================================================
def exact_shapley(v: RoundValueTable, n: int, cap: int = EXACT_CLIENT_CAP, round_index: int = 0) -> RoundShapley:
    """phi_i = sum_{S ⊆ N\\{i}} |S|!(n-|S|-1)!/n! * [v(S ∪ {i}) - v(S)]."""
    if n > cap:
        raise ValueError(f"exact Shapley limited to {cap} clients, got {n}")
    missing = [m for m in range(1 << n) if m not in v]
    if missing:
        raise ValueError(f"incomplete value table: {len(missing)} of {1 << n} coalitions missing")
    weights = [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)]
    phi = np.zeros(n)
    for i in range(n):
        bit = 1 << i
        acc = 0.0
        for mask in range(1 << n):
            if mask & bit:
                continue
            acc += weights[bin(mask).count("1")] * (v[mask | bit] - v[mask])
        phi[i] = acc
    full = (1 << n) - 1
    return RoundShapley(phi, round_index, float(v[full]), float(v[0]))


def mc_shapley(
    value_fn: Callable[[int], float],
    n: int,
    num_perms: int,
    seed: int,
    permutations: Sequence[Sequence[int]] | None = None,
    round_index: int = 0,
) -> RoundShapley:
    """
    Average marginal contributions over `num_perms` seeded uniform
    permutations, memoising coalition utilities. `permutations` replaces
    the random draw (e.g. full enumeration).
    """
    if num_perms < 1:
        raise ValueError("num_perms must be >= 1")
    table = value_fn if isinstance(value_fn, LazyValueTable) else LazyValueTable(value_fn, n)
    if permutations is None:
        rng = generator(seed)
        permutations = [rng.permutation(n) for _ in range(num_perms)]
    total = np.zeros(n)
    for perm in permutations:
        mask, prev = 0, table(0)
        for i in perm:
            mask |= 1 << int(i)
            cur = table(mask)
            total[int(i)] += cur - prev
            prev = cur
    return RoundShapley(total / len(permutations), round_index, table((1 << n) - 1), table(0))


def round_shapley(
    prev_global: ParamVec,
    updates: Sequence[ClientUpdate],
    val_set,
    arch: ModelArch,
    spec: ShapleySpec = ShapleySpec(),
    seed: int = 0,
    round_index: int = 0,
    permutations: Sequence[Sequence[int]] | None = None,
) -> RoundShapley:
    """One round's Shapley vector over a lazily built, memoised value table."""
    n = len(updates)
    if spec.mode == "exact" and n > spec.max_exact_clients:
        raise ValueError(f"exact Shapley limited to {spec.max_exact_clients} clients, got {n}")
    table = LazyValueTable(
        lambda mask: reconstruct_utility(prev_global, updates, mask, val_set, arch, spec.utility), n
    )
    if spec.mode == "exact":
        rs = exact_shapley(table.eager(), n, spec.max_exact_clients, round_index)
    else:
        rs = mc_shapley(table, n, spec.mc_perms, seed, permutations, round_index)
    log.debug("round %d: %d of %d coalitions evaluated", round_index, len(table.table), 1 << n)
    return rs


# ============================================================
# 4. ACCUMULATION & NORMALISATION
# ============================================================
def _to_shares(raw: np.ndarray, negatives: str) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if negatives == "shift" and raw.min() < 0:
        pos = raw - raw.min()
    else:
        pos = np.clip(raw, 0.0, None)
    total = float(pos.sum())
    if total > 0:
        shares = pos / total
    else:
        shares = np.full(raw.shape[0], 1.0 / raw.shape[0])
    return shares


def accumulate_normalize(
    rounds: Sequence[RoundShapley],
    normalize: str = "end",
    negatives: str = "clamp",
) -> ContributionVector:
    """
    raw_i = sum_t phi_i^t; negatives clamped to 0 (or shifted by the minimum);
    shares = raw / sum raw, uniform when nothing positive is left.
    With normalize="per_round" each round is turned into shares first.
    """
    if not rounds:
        raise ValueError("no Shapley rounds to accumulate")
    n = rounds[0].n
    if any(r.n != n for r in rounds):
        raise ValueError("inconsistent client counts across rounds")
    raw = np.zeros(n)
    for r in rounds:
        raw += _to_shares(r.phi, negatives) if normalize == "per_round" else r.phi
    return ContributionVector(_to_shares(raw, negatives))


def mean_vector(vectors: Sequence[ContributionVector]) -> ContributionVector:
    """Per-client arithmetic mean of valid contribution vectors."""
    if not vectors:
        raise ValueError("no contribution vectors")
    stacked = np.vstack([v.shares for v in vectors])
    mean = stacked.mean(axis=0)
    return ContributionVector(mean)
