import numpy as np
import pytest

from param_math import as_param_vec, coord_median, coord_trimmed_mean, l2_dist, linf_dist, sq_dist, weighted_sum


@pytest.mark.parametrize("vecs, weights, expected", [
    ([(0, 2), (2, 0)], [0.5, 0.5], [1.0, 1.0]),
    ([(0,), (4,)], [0.25, 0.75], [3.0]),
    ([(1, 1)], [1.0], [1.0, 1.0]),
])
def test_weighted_sum_examples(vecs, weights, expected):
    assert weighted_sum(vecs, weights).tolist() == expected


def test_weighted_sum_index_makes_order_irrelevant():
    rng = np.random.default_rng(3)
    vecs = [rng.normal(size=6) for _ in range(5)]
    w = rng.dirichlet(np.ones(5))
    ids = [4, 1, 3, 0, 2]
    perm = [2, 0, 4, 1, 3]
    a = weighted_sum(vecs, w, index=ids)
    b = weighted_sum([vecs[j] for j in perm], [w[j] for j in perm], index=[ids[j] for j in perm])
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("vecs, weights, match", [
    ([], [], "empty"),
    ([(1, 2), (1,)], [0.5, 0.5], "dimension mismatch"),
    ([(1,), (2,)], [0.0, 0.0], "all weights are zero"),
    ([(1,), (2,)], [1.0], "weights for"),
    ([(1,), (2,)], [np.nan, 1.0], "non-finite"),
])
def test_weighted_sum_rejects(vecs, weights, match):
    with pytest.raises(ValueError, match=match):
        weighted_sum(vecs, weights)


def test_as_param_vec_rejects_nan():
    with pytest.raises(ValueError):
        as_param_vec([1.0, np.nan])


@pytest.mark.parametrize("vecs, expected", [
    ([(1,), (5,), (100,)], [5.0]),
    ([(1,), (3,)], [2.0]),
    ([(2, 9), (2, 9)], [2.0, 9.0]),
])
def test_coord_median(vecs, expected):
    assert coord_median(vecs).tolist() == expected


@pytest.mark.parametrize("vecs, frac, expected", [
    ([(0,), (5,), (1000,)], 0.34, [5.0]),
    ([(1,), (2,), (3,), (4,)], 0.0, [2.5]),
    ([(0,), (1,), (2,), (3,), (100,)], 0.2, [2.0]),
])
def test_coord_trimmed_mean(vecs, frac, expected):
    assert coord_trimmed_mean(vecs, frac).tolist() == pytest.approx(expected, abs=1e-15)


def test_trimmed_mean_bounds():
    with pytest.raises(ValueError):
        coord_trimmed_mean([(1,), (2,)], 0.5)
    with pytest.raises(ValueError):
        coord_median([])


def test_robust_outputs_stay_in_hull():
    rng = np.random.default_rng(11)
    vecs = [rng.normal(size=8) for _ in range(7)]
    lo, hi = np.min(vecs, axis=0), np.max(vecs, axis=0)
    for out in (coord_median(vecs), coord_trimmed_mean(vecs, 0.2)):
        assert np.all(out >= lo) and np.all(out <= hi)


def test_distances():
    assert l2_dist((0.4, 0.6), (0.5, 0.5)) == pytest.approx(0.1414213562373095, abs=1e-15)
    assert l2_dist((3, 0), (0, 4)) == 5.0
    assert sq_dist((3, 0), (0, 4)) == 25.0
    assert linf_dist((0.4, 0.6), (0.5, 0.5)) == pytest.approx(0.1, abs=1e-15)
    assert linf_dist((0, 10), (1, 0)) == 10.0
    a = np.array([0.3, -1.2, 7.0])
    assert l2_dist(a, a) == 0.0 and linf_dist(a, a) == 0.0
    with pytest.raises(ValueError, match="dimension mismatch"):
        l2_dist((1, 2), (1, 2, 3))


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("dist", [l2_dist, linf_dist])
def test_distance_symmetry_and_triangle(dist, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(scale=3.0, size=7) for _ in range(3))
    assert dist(a, b) == dist(b, a)
    assert dist(a, c) <= dist(a, b) + dist(b, c) + 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_untrimmed_mean_is_uniform_weighted_sum(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 9))
    vecs = [rng.normal(size=5) for _ in range(m)]
    assert np.max(np.abs(coord_trimmed_mean(vecs, 0.0) - weighted_sum(vecs, [1.0 / m] * m))) <= 1e-12
