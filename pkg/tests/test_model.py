import math

import numpy as np
import pytest

from data import Dataset
from model import (
    LocalTrainConfig, ModelArch, evaluate, init_params, loss_and_grad, numeric_grad_check, param_dim,
    predict_proba, train_local, unpack,
)


def test_init_params_shape_and_zero_biases():
    arch = ModelArch("logistic", input_dim=4, num_classes=3)
    w = init_params(arch, seed=5)
    assert w.shape == (15,) == (param_dim(arch),)
    _, b = unpack(arch, w)
    assert np.all(b == 0.0)
    assert w.tobytes() == init_params(arch, seed=5).tobytes()

    mlp = ModelArch("mlp1", input_dim=4, num_classes=3, hidden_dim=6)
    layers = unpack(mlp, init_params(mlp, seed=1))
    assert [l.shape for l in layers] == [(4, 6), (6,), (6, 3), (3,)]
    assert np.all(layers[1] == 0.0) and np.all(layers[3] == 0.0)


def test_arch_validation():
    with pytest.raises(ValueError):
        ModelArch("cnn")
    with pytest.raises(ValueError):
        ModelArch(num_classes=1)
    with pytest.raises(ValueError):
        LocalTrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        LocalTrainConfig(learning_rate=math.inf)


def test_zero_learning_rate_is_identity(small_dataset):
    arch = ModelArch("logistic", input_dim=4, num_classes=3)
    w = init_params(arch, seed=2)
    out = train_local(w, small_dataset, LocalTrainConfig(epochs=2, learning_rate=0.0, batch_size=7), arch)
    assert out.tobytes() == w.tobytes()
    assert out is not w


def test_train_local_is_seeded_and_pure(small_dataset):
    arch = ModelArch("mlp1", input_dim=4, num_classes=3, hidden_dim=5)
    w = init_params(arch, seed=2)
    before = w.copy()
    cfg = LocalTrainConfig(epochs=2, learning_rate=0.1, batch_size=8, seed=99)
    a = train_local(w, small_dataset, cfg, arch)
    b = train_local(w, small_dataset, cfg, arch)
    assert a.tobytes() == b.tobytes()
    assert w.tobytes() == before.tobytes()
    assert a.tobytes() != train_local(w, small_dataset, cfg.with_seed(100), arch).tobytes()


def test_train_local_dimension_mismatch(small_dataset):
    with pytest.raises(ValueError, match="dimension mismatch"):
        train_local(np.zeros(3), small_dataset, LocalTrainConfig(), ModelArch("logistic", 4, 3))


def test_uniform_logits_give_base_rate_and_log_k():
    k = 4
    arch = ModelArch("logistic", input_dim=2, num_classes=k)
    labels = np.repeat(np.arange(k), 5)
    ds = Dataset(np.random.default_rng(0).normal(size=(20, 2)), labels)
    res = evaluate(np.zeros(param_dim(arch)), ds, arch)
    assert res.accuracy == 0.25
    assert res.loss == pytest.approx(math.log(k), abs=1e-9)
    assert evaluate(np.zeros(param_dim(arch)), ds, arch) == res


def test_overfits_separable_data():
    arch = ModelArch("logistic", input_dim=2, num_classes=2)
    X = np.array([[1.0, 1.0], [1.2, 0.8], [-1.0, -1.0], [-0.8, -1.2]])
    ds = Dataset(X, np.array([0, 0, 1, 1]))
    w = train_local(init_params(arch, 0), ds, LocalTrainConfig(epochs=500, learning_rate=0.5, batch_size=4), arch)
    assert evaluate(w, ds, arch).accuracy == 1.0


def test_predict_proba_rows_sum_to_one(small_dataset):
    arch = ModelArch("mlp1", input_dim=4, num_classes=3, hidden_dim=5)
    p = predict_proba(arch, init_params(arch, 4), small_dataset.features)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("kind, tol", [("logistic", 1e-6), ("mlp1", 1e-5)])
@pytest.mark.parametrize("seed", range(20))
def test_gradient_check(kind, tol, seed):
    arch = ModelArch(kind, input_dim=5, num_classes=4, hidden_dim=6)
    rng = np.random.default_rng(seed)
    w = init_params(arch, seed) + rng.normal(scale=0.1, size=param_dim(arch))
    x = rng.normal(size=5)
    assert numeric_grad_check(arch, w, (x, int(rng.integers(4)))) <= tol


def test_gradient_check_at_zero_is_finite():
    arch = ModelArch("mlp1", input_dim=3, num_classes=2, hidden_dim=4)
    err = numeric_grad_check(arch, np.zeros(param_dim(arch)), (np.ones(3), 1))
    assert math.isfinite(err)


def test_loss_and_grad_batch_mean():
    arch = ModelArch("logistic", input_dim=2, num_classes=2)
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    y = np.array([0, 1])
    loss, grad = loss_and_grad(arch, np.zeros(param_dim(arch)), X, y)
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    assert grad.shape == (param_dim(arch),)
