from __future__ import annotations

import struct

import numpy as np
import pytest

from data import DatasetSpec, PartitionSpec, gen_synthetic
from experiment import FederationConfig, ScenarioConfig
from model import LocalTrainConfig, ModelArch
from strategies import ClientUpdate


@pytest.fixture
def small_dataset():
    return gen_synthetic(num_classes=3, input_dim=4, per_class_count=20, noise_sigma=0.5, seed=7)


@pytest.fixture
def tiny_config():
    """Three clients, three rounds, 3-class blobs: runs in well under a second."""
    return FederationConfig(
        dataset=DatasetSpec(num_classes=3, input_dim=4, per_class_count=30, noise_sigma=0.5),
        arch=ModelArch("logistic", input_dim=4, num_classes=3),
        rounds=3,
        local=LocalTrainConfig(epochs=1, learning_rate=0.1, batch_size=16),
        partition=PartitionSpec(num_clients=3, alpha=10.0, min_shard=5),
        master_seed=42,
    )


@pytest.fixture
def tiny_scenario():
    return ScenarioConfig(
        name="toy",
        datasets=(DatasetSpec(num_classes=3, input_dim=4, per_class_count=30, noise_sigma=0.5),),
        alphas=(1.0, 100.0),
        epochs=(1,),
        seeds=(0,),
        fedrandom_runs=3,
        rounds=2,
        num_clients=3,
        min_shard=5,
        batch_size=16,
    )


def make_updates(values, sizes=None):
    sizes = sizes or [10] * len(values)
    return [
        ClientUpdate(i, np.atleast_1d(np.asarray(v, dtype=np.float64)), n)
        for i, (v, n) in enumerate(zip(values, sizes))
    ]


def write_idx_pair(tmp_path, images: np.ndarray, labels: np.ndarray, *, image_magic=0x803, label_count=None):
    count, rows, cols = images.shape
    img = tmp_path / "images.idx"
    lbl = tmp_path / "labels.idx"
    img.write_bytes(struct.pack(">IIII", image_magic, count, rows, cols) + images.astype(np.uint8).tobytes())
    n = len(labels) if label_count is None else label_count
    lbl.write_bytes(struct.pack(">II", 0x801, n) + labels.astype(np.uint8).tobytes())
    return img, lbl
