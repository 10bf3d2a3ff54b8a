import numpy as np
import pytest

from tmophr.metrics import (
    SHAPE,
    SHAPE_SIZE,
    SIZE,
    BarrierError,
    classification,
    metric_grad,
    metric_grads,
    metric_value,
    metric_values,
)

ALL_IDS = (2, 55, 7, 9)


def random_positive_dets(n, rng, spread=1.0):
    out = []
    while len(out) < n:
        T = np.eye(2) + spread * rng.standard_normal((2, 2))
        if np.linalg.det(T) > 1e-3:
            out.append(T)
    return np.array(out)


def test_classification():
    assert classification(2) == SHAPE
    assert classification(55) == SIZE
    assert classification(7) == SHAPE_SIZE
    assert classification(9) == SHAPE_SIZE
    with pytest.raises(ValueError):
        classification(77)


@pytest.mark.parametrize("mid", ALL_IDS)
def test_identity_is_optimal(mid):
    assert metric_value(mid, np.eye(2)) == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(metric_grad(mid, np.eye(2)), 0.0, atol=1e-14)


def test_direct_formula_values():
    assert metric_value(2, np.diag([2.0, 1.0])) == pytest.approx(0.25)
    T = np.diag([2.0, 2.0])
    assert metric_value(55, T) == pytest.approx(9.0)
    assert metric_value(2, T) == pytest.approx(0.0, abs=1e-15)  # size-invariant


@pytest.mark.parametrize("mid", ALL_IDS)
def test_nonnegative_on_random_matrices(mid):
    rng = np.random.default_rng(17)
    T = random_positive_dets(10_000, rng)
    mu = metric_values(mid, T)
    assert np.all(np.isfinite(mu))
    assert mu.min() >= -1e-13


def test_shape_metric_scale_invariance():
    rng = np.random.default_rng(23)
    T = random_positive_dets(200, rng)
    s = rng.uniform(0.1, 10.0, 200)
    assert np.allclose(
        metric_values(2, s[:, None, None] * T), metric_values(2, T), rtol=1e-12
    )


def test_size_metric_determinant_only():
    rng = np.random.default_rng(29)
    T = random_positive_dets(200, rng)
    det = np.linalg.det(T)
    # compare against diagonal matrices with the same determinant
    D = np.zeros_like(T)
    D[:, 0, 0] = det
    D[:, 1, 1] = 1.0
    assert np.allclose(metric_values(55, T), metric_values(55, D), rtol=1e-12)


def test_barrier_on_nonpositive_det():
    with pytest.raises(BarrierError):
        metric_value(2, np.diag([1.0, -1.0]))
    mu = metric_values(9, np.array([np.diag([1.0, -1.0]), np.eye(2)]))
    assert np.isinf(mu[0]) and mu[1] == pytest.approx(0.0)


@pytest.mark.parametrize("mid", ALL_IDS)
def test_gradients_match_finite_differences(mid):
    rng = np.random.default_rng(31)
    h = 1e-7
    for T in random_positive_dets(20, rng, spread=0.6):
        g = metric_grad(mid, T)
        fd = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                E = np.zeros((2, 2))
                E[i, j] = h
                fd[i, j] = (metric_value(mid, T + E) - metric_value(mid, T - E)) / (2 * h)
        denom = max(np.abs(fd).max(), 1.0)
        assert np.abs(g - fd).max() / denom < 1e-6


def test_mu55_stationary_at_identity_vectorized():
    g = metric_grads(55, np.eye(2)[None])
    assert np.allclose(g, 0.0)
