"""
model.py — FedSim Desk-Scale Classifiers
----------------------------------------
Small differentiable classifiers (multinomial logistic regression and a
one-hidden-layer tanh MLP) over a flat float64 parameter vector, with
Glorot-uniform initialisation, plain mini-batch SGD and exact backprop.

Parameter layout (C order, concatenated):
    logistic : W (input_dim x num_classes), b (num_classes)
    mlp1     : W1 (input_dim x hidden_dim), b1 (hidden_dim),
               W2 (hidden_dim x num_classes), b2 (num_classes)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from param_math import ParamVec
from rng import generator

FD_STEP = 1e-5


# ============================================================
# 1. TYPES
# ============================================================
@dataclass(frozen=True)
class ModelArch:
    kind: Literal["logistic", "mlp1"] = "logistic"
    input_dim: int = 8
    num_classes: int = 4
    hidden_dim: int = 16

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp1"):
            raise ValueError(f"unknown architecture kind: {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")

    def layer_shapes(self) -> list[tuple[int, ...]]:
        if self.kind == "logistic":
            return [(self.input_dim, self.num_classes), (self.num_classes,)]
        return [
            (self.input_dim, self.hidden_dim), (self.hidden_dim,),
            (self.hidden_dim, self.num_classes), (self.num_classes,),
        ]


@dataclass(frozen=True)
class LocalTrainConfig:
    epochs: int = 1
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ValueError(f"learning_rate must be finite and non-negative, got {self.learning_rate}")

    def with_seed(self, seed: int) -> "LocalTrainConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class EvalResult:
    loss: float
    accuracy: float
    correct: int
    total: int


# ============================================================
# 2. PARAMETER LAYOUT
# ============================================================
def param_dim(arch: ModelArch) -> int:
    return sum(int(np.prod(s)) for s in arch.layer_shapes())


def unpack(arch: ModelArch, params: ParamVec) -> list[np.ndarray]:
    """Split the flat vector into per-layer views (no copy)."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != param_dim(arch):
        raise ValueError(f"dimension mismatch: expected {param_dim(arch)} parameters, got {params.shape}")
    out, pos = [], 0
    for shape in arch.layer_shapes():
        size = int(np.prod(shape))
        out.append(params[pos:pos + size].reshape(shape))
        pos += size
    return out


def init_params(arch: ModelArch, seed: int) -> ParamVec:
    """Weights ~ U(-a, a) with a = sqrt(6/(fan_in+fan_out)) per layer; biases zero."""
    rng = generator(seed)
    chunks = []
    for shape in arch.layer_shapes():
        if len(shape) == 2:
            a = math.sqrt(6.0 / (shape[0] + shape[1]))
            chunks.append(rng.uniform(-a, a, size=shape).reshape(-1))
        else:
            chunks.append(np.zeros(shape, dtype=np.float64))
    return np.concatenate(chunks).astype(np.float64)


# ============================================================
# 3. FORWARD / BACKWARD
# ============================================================
def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward(arch: ModelArch, params: ParamVec, X: np.ndarray):
    layers = unpack(arch, params)
    if X.shape[1] != arch.input_dim:
        raise ValueError(f"dimension mismatch: features have {X.shape[1]} columns, arch expects {arch.input_dim}")
    if arch.kind == "logistic":
        W, b = layers
        return X @ W + b, None
    W1, b1, W2, b2 = layers
    h = np.tanh(X @ W1 + b1)
    return h @ W2 + b2, h


def predict_proba(arch: ModelArch, params: ParamVec, X: np.ndarray) -> np.ndarray:
    logits, _ = _forward(arch, params, np.asarray(X, dtype=np.float64))
    return np.exp(_log_softmax(logits))


def loss_and_grad(arch: ModelArch, params: ParamVec, X: np.ndarray, y: np.ndarray) -> tuple[float, ParamVec]:
    """Mean cross-entropy over the batch and its gradient as a flat vector."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    B = X.shape[0]
    logits, h = _forward(arch, params, X)
    logp = _log_softmax(logits)
    loss = -float(logp[np.arange(B), y].mean())

    dlogits = np.exp(logp)
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B

    if arch.kind == "logistic":
        grads = [X.T @ dlogits, dlogits.sum(axis=0)]
    else:
        _, _, W2, _ = unpack(arch, params)
        dz = (dlogits @ W2.T) * (1.0 - h * h)
        grads = [X.T @ dz, dz.sum(axis=0), h.T @ dlogits, dlogits.sum(axis=0)]
    return loss, np.concatenate([g.reshape(-1) for g in grads])


# ============================================================
# 4. TRAINING & EVALUATION
# ============================================================
def train_local(params: ParamVec, data, cfg: LocalTrainConfig, arch: ModelArch) -> ParamVec:
    """
    `cfg.epochs` full passes over the shard in seeded-shuffled mini-batches
    (last batch may be short), plain SGD. The input vector is not modified.
    `data` is a ClientDataset or a Dataset.
    """
    ds = getattr(data, "data", data)
    n = ds.features.shape[0]
    if n == 0:
        raise ValueError("empty shard")
    w = np.array(params, dtype=np.float64, copy=True)
    if w.shape[0] != param_dim(arch):
        raise ValueError(f"dimension mismatch: expected {param_dim(arch)} parameters, got {w.shape[0]}")
    rng = generator(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, g = loss_and_grad(arch, w, ds.features[idx], ds.labels[idx])
            w -= cfg.learning_rate * g
    return w


def evaluate(params: ParamVec, data, arch: ModelArch) -> EvalResult:
    """Mean cross-entropy and accuracy; argmax ties go to the lowest class index."""
    ds = getattr(data, "data", data)
    n = ds.features.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    logits, _ = _forward(arch, params, ds.features)
    logp = _log_softmax(logits)
    loss = -float(logp[np.arange(n), ds.labels].mean())
    correct = int(np.sum(np.argmax(logits, axis=1) == ds.labels))
    return EvalResult(loss=loss, accuracy=correct / n, correct=correct, total=n)


# ============================================================
# 5. GRADIENT CHECK
# ============================================================
def numeric_grad_check(arch: ModelArch, params: ParamVec, sample: tuple[np.ndarray, int]) -> float:
    """Max |analytic - central difference| over all coordinates for one sample."""
    x, label = sample
    X = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y = np.array([int(label)])
    w = np.array(params, dtype=np.float64, copy=True)
    _, analytic = loss_and_grad(arch, w, X, y)
    worst = 0.0
    for k in range(w.shape[0]):
        orig = w[k]
        w[k] = orig + FD_STEP
        up, _ = loss_and_grad(arch, w, X, y)
        w[k] = orig - FD_STEP
        down, _ = loss_and_grad(arch, w, X, y)
        w[k] = orig
        worst = max(worst, abs(analytic[k] - (up - down) / (2 * FD_STEP)))
    return worst
