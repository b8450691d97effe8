"""
rng.py — FedSim Seed Derivation
-------------------------------
SplitMix64-based seed streams. Every random decision in the simulator
(dataset draw, holdout, partition, initialisation, local shuffles,
FedRandom choices, Monte-Carlo permutations) takes its seed from here, so
a run is fully determined by its master seed and independent of worker
count or scheduling order.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# ============================================================
# 1. STREAM TAGS
# ============================================================
STREAM_DATA = 0xD1
STREAM_HOLDOUT = 0xD2
STREAM_PARTITION = 0xD3
STREAM_INIT = 0xA1
STREAM_TRAIN = 0xA2
STREAM_SHAPLEY = 0xB1
STREAM_CELL = 0xC1


# ============================================================
# 2. SPLITMIX64
# ============================================================
def splitmix64(x: int) -> int:
    """One SplitMix64 step: advance by the golden gamma, then finalize."""
    z = (int(x) + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Fold any number of integers into one 64-bit seed."""
    s = 0
    for p in parts:
        s = splitmix64(s ^ (int(p) & MASK64))
    return s


def generator(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & MASK64)
