"""
param_math.py — FedSim Parameter Arithmetic
-------------------------------------------
Exact, order-deterministic arithmetic on flat float64 parameter vectors.
Every aggregation rule and every contribution metric goes through here.

All functions are pure and thread-safe.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

ParamVec = np.ndarray


# ============================================================
# 1. VALIDATION
# ============================================================
def as_param_vec(values) -> ParamVec:
    """Coerce to a 1-D float64 vector and reject NaN/Inf."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError("parameter vector contains non-finite entries")
    return v


def _stack(vecs: Sequence[ParamVec]) -> np.ndarray:
    if len(vecs) == 0:
        raise ValueError("empty input: at least one vector required")
    arrs = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vecs]
    d = arrs[0].shape[0]
    for j, a in enumerate(arrs):
        if a.shape[0] != d:
            raise ValueError(f"dimension mismatch: vector {j} has {a.shape[0]}, expected {d}")
    return np.vstack(arrs)


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


# ============================================================
# 2. AGGREGATION PRIMITIVES
# ============================================================
def weighted_sum(
    vecs: Sequence[ParamVec],
    weights: Sequence[float],
    index: Sequence[int] | None = None,
) -> ParamVec:
    """
    out[k] = sum_j weights[j] * vecs[j][k], accumulated in a fixed order.
    When `index` is given (client ids), inputs are first sorted by ascending
    index so that any joint permutation of the inputs yields the same bits.
    """
    stacked = _stack(vecs)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != stacked.shape[0]:
        raise ValueError(f"{w.shape[0]} weights for {stacked.shape[0]} vectors")
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite weight")
    if not np.any(w != 0.0):
        raise ValueError("all weights are zero")

    order = range(stacked.shape[0])
    if index is not None:
        if len(index) != stacked.shape[0]:
            raise ValueError(f"{len(index)} indices for {stacked.shape[0]} vectors")
        order = sorted(range(stacked.shape[0]), key=lambda j: index[j])

    out = np.zeros(stacked.shape[1], dtype=np.float64)
    for j in order:
        out += w[j] * stacked[j]
    return out


def coord_median(vecs: Sequence[ParamVec]) -> ParamVec:
    """Coordinate-wise median; even counts take the midpoint of the middle pair."""
    stacked = np.sort(_stack(vecs), axis=0)
    m = stacked.shape[0]
    if m % 2 == 1:
        return stacked[m // 2].copy()
    return (stacked[m // 2 - 1] + stacked[m // 2]) / 2.0


def coord_trimmed_mean(vecs: Sequence[ParamVec], trim_frac: float) -> ParamVec:
    """Drop the k = floor(trim_frac*m) smallest and largest per coordinate, average the rest."""
    if not 0.0 <= trim_frac < 0.5:
        raise ValueError(f"trim_frac must lie in [0, 0.5), got {trim_frac}")
    stacked = np.sort(_stack(vecs), axis=0)
    m = stacked.shape[0]
    k = int(math.floor(trim_frac * m))
    if 2 * k >= m:
        raise ValueError(f"trimming {k} from each side leaves nothing of {m} inputs")
    kept = stacked[k:m - k]
    out = np.zeros(stacked.shape[1], dtype=np.float64)
    for row in kept:
        out += row
    return out / kept.shape[0]


# ============================================================
# 3. DISTANCES
# ============================================================
def sq_dist(a, b) -> float:
    a, b = _check_pair(a, b)
    diff = a - b
    return float(np.dot(diff, diff))


def l2_dist(a, b) -> float:
    return math.sqrt(sq_dist(a, b))


def linf_dist(a, b) -> float:
    a, b = _check_pair(a, b)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))
