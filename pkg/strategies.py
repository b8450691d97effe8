"""
strategies.py — FedSim Server Aggregation Strategies
----------------------------------------------------
Server-side aggregation rules with explicit, functional state:
FedAvg, FedAvgM, FedAdagrad, FedAdam, FedYogi, FedMedian, FedTrimmedAvg,
Krum, and the FedRandom meta-strategy that uniformly draws one member of
a pool every round.

Sign convention: the pseudo-gradient points from the current global model
toward the size-weighted client mean and is *added* by the server rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Literal, Mapping, Sequence

import numpy as np

from param_math import ParamVec, coord_median, coord_trimmed_mean, sq_dist, weighted_sum


# ============================================================
# 1. TYPES
# ============================================================
class StrategyKind(str, Enum):
    FEDAVG = "FedAvg"
    FEDAVGM = "FedAvgM"
    FEDADAGRAD = "FedAdagrad"
    FEDADAM = "FedAdam"
    FEDYOGI = "FedYogi"
    FEDMEDIAN = "FedMedian"
    FEDTRIMMEDAVG = "FedTrimmedAvg"
    KRUM = "Krum"
    FEDRANDOM = "FedRandom"


MSM_POOL: tuple[StrategyKind, ...] = (
    StrategyKind.FEDAVG, StrategyKind.FEDAVGM, StrategyKind.FEDADAGRAD, StrategyKind.FEDADAM,
    StrategyKind.FEDYOGI, StrategyKind.FEDMEDIAN, StrategyKind.FEDTRIMMEDAVG, StrategyKind.KRUM,
)
FEDRANDOM_POOL: tuple[StrategyKind, ...] = MSM_POOL[:5]

ADAPTIVE = (StrategyKind.FEDADAGRAD, StrategyKind.FEDADAM, StrategyKind.FEDYOGI)
DEFAULT_SERVER_LR = {StrategyKind.FEDAVGM: 1.0, **{k: 0.1 for k in ADAPTIVE}}


@dataclass(frozen=True)
class StrategyHyper:
    server_lr: float | None = None     # None → per-kind default
    beta1: float = 0.9
    beta2: float = 0.99
    tau: float = 1e-3
    momentum: float = 0.9
    trim_frac: float = 0.2
    krum_f: int = 0

    def __post_init__(self):
        if self.server_lr is not None and not (self.server_lr > 0 and math.isfinite(self.server_lr)):
            raise ValueError("server_lr must be a positive finite real")
        for name in ("beta1", "beta2", "momentum"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("tau must be a positive finite real")
        if not 0.0 <= self.trim_frac < 0.5:
            raise ValueError("trim_frac must lie in [0, 0.5)")
        if self.krum_f < 0:
            raise ValueError("krum_f must be >= 0")

    def lr_for(self, kind: StrategyKind) -> float:
        return self.server_lr if self.server_lr is not None else DEFAULT_SERVER_LR.get(kind, 1.0)


@dataclass(frozen=True)
class FedRandomSpec:
    pool: tuple[StrategyKind, ...] = FEDRANDOM_POOL
    state_mode: Literal["persistent", "reset"] = "persistent"

    def __post_init__(self):
        if not self.pool:
            raise ValueError("FedRandom pool must not be empty")
        if StrategyKind.FEDRANDOM in self.pool:
            raise ValueError("FedRandom cannot be a member of its own pool")
        if len(set(self.pool)) != len(self.pool):
            raise ValueError("FedRandom pool contains duplicates")
        if self.state_mode not in ("persistent", "reset"):
            raise ValueError(f"unknown state_mode {self.state_mode!r}")


@dataclass(frozen=True, eq=False)
class StrategyState:
    momentum: ParamVec | None = None
    second_moment: ParamVec | None = None
    round_counter: int = 0


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    client_id: int
    params: ParamVec
    n_i: int

    def __post_init__(self):
        if self.n_i < 1:
            raise ValueError(f"client {self.client_id}: n_i must be positive")
        if not np.all(np.isfinite(self.params)):
            raise ValueError(f"client {self.client_id}: non-finite parameters")


# ============================================================
# 2. SHARED PIECES
# ============================================================
def _canonical(updates: Sequence[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise ValueError("no client updates")
    return sorted(updates, key=lambda u: u.client_id)


def _size_weights(updates: Sequence[ClientUpdate]) -> list[float]:
    total = float(sum(u.n_i for u in updates))
    return [u.n_i / total for u in updates]


def pseudo_gradient(global_params: ParamVec, updates: Sequence[ClientUpdate]) -> ParamVec:
    """Delta = sum_i (n_i/sum n) * (params_i - global), in client-index order."""
    ups = _canonical(updates)
    g = np.asarray(global_params, dtype=np.float64)
    return weighted_sum([u.params - g for u in ups], _size_weights(ups))


def _krum(updates: list[ClientUpdate], f: int) -> ParamVec:
    m = len(updates)
    neighbours = m - f - 2
    if neighbours < 1:
        raise ValueError(f"Krum needs m - f - 2 >= 1 (m={m}, f={f})")
    dist = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            dist[i, j] = dist[j, i] = sq_dist(updates[i].params, updates[j].params)
    scores = []
    for i in range(m):
        others = np.sort(np.delete(dist[i], i))
        scores.append(float(others[:neighbours].sum()))
    # argmin returns the first minimum → lowest client_id on ties
    return np.array(updates[int(np.argmin(scores))].params, dtype=np.float64, copy=True)


# ============================================================
# 3. AGGREGATION
# ============================================================
def aggregate(
    kind: StrategyKind,
    hyper: StrategyHyper,
    state: StrategyState,
    global_params: ParamVec,
    updates: Sequence[ClientUpdate],
) -> tuple[ParamVec, StrategyState]:
    """Apply one server rule; returns the new global model and the new state."""
    kind = StrategyKind(kind)
    ups = _canonical(updates)
    g = np.asarray(global_params, dtype=np.float64)
    params = [u.params for u in ups]
    next_round = state.round_counter + 1
    new_state = StrategyState(state.momentum, state.second_moment, next_round)

    if kind == StrategyKind.FEDAVG:
        new_global = weighted_sum(params, _size_weights(ups))
    elif kind == StrategyKind.FEDMEDIAN:
        new_global = coord_median(params)
    elif kind == StrategyKind.FEDTRIMMEDAVG:
        new_global = coord_trimmed_mean(params, hyper.trim_frac)
    elif kind == StrategyKind.KRUM:
        new_global = _krum(ups, hyper.krum_f)
    elif kind == StrategyKind.FEDAVGM:
        delta = pseudo_gradient(g, ups)
        m_prev = state.momentum if state.momentum is not None else np.zeros_like(delta)
        m_t = hyper.momentum * m_prev + delta
        new_global = g + hyper.lr_for(kind) * m_t
        new_state = StrategyState(m_t, state.second_moment, next_round)
    elif kind in ADAPTIVE:
        delta = pseudo_gradient(g, ups)
        m_prev = state.momentum if state.momentum is not None else np.zeros_like(delta)
        v_prev = state.second_moment if state.second_moment is not None else np.zeros_like(delta)
        m_t = hyper.beta1 * m_prev + (1.0 - hyper.beta1) * delta
        d2 = delta * delta
        if kind == StrategyKind.FEDADAGRAD:
            v_t = v_prev + d2
        elif kind == StrategyKind.FEDADAM:
            v_t = hyper.beta2 * v_prev + (1.0 - hyper.beta2) * d2
        else:
            v_t = v_prev - (1.0 - hyper.beta2) * d2 * np.sign(v_prev - d2)
        new_global = g + hyper.lr_for(kind) * m_t / (np.sqrt(v_t) + hyper.tau)
        new_state = StrategyState(m_t, v_t, next_round)
    else:
        raise ValueError(f"{kind.value} is a meta-strategy; use fedrandom_aggregate")

    if not np.all(np.isfinite(new_global)):
        raise ValueError(f"{kind.value} produced a non-finite global model")
    return new_global, new_state


# ============================================================
# 4. FEDRANDOM
# ============================================================
def fedrandom_choose(pool: Sequence[StrategyKind], round_seed: int) -> StrategyKind:
    """Uniform draw from the pool, fully determined by the round seed."""
    if not pool:
        raise ValueError("empty FedRandom pool")
    return StrategyKind(pool[int(round_seed) % len(pool)])


def fresh_states(pool: Sequence[StrategyKind]) -> dict[StrategyKind, StrategyState]:
    return {StrategyKind(k): StrategyState() for k in pool}


def fedrandom_aggregate(
    hyper: StrategyHyper,
    states: Mapping[StrategyKind, StrategyState],
    global_params: ParamVec,
    updates: Sequence[ClientUpdate],
    round_seed: int,
    spec: FedRandomSpec | None = None,
) -> tuple[ParamVec, dict[StrategyKind, StrategyState], StrategyKind]:
    """
    Draw one pool member for this round and delegate to it. Each member keeps
    its own state, advanced only in the rounds where it is drawn
    ("persistent"), or started from zero every time ("reset").
    """
    spec = spec or FedRandomSpec()
    chosen = fedrandom_choose(spec.pool, round_seed)
    prior = StrategyState() if spec.state_mode == "reset" else states.get(chosen, StrategyState())
    new_global, new_state = aggregate(chosen, hyper, prior, global_params, updates)
    new_states = dict(states)
    new_states[chosen] = new_state
    return new_global, new_states, chosen
