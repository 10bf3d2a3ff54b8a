"""Quality metrics mu(T) on the current-to-target transformation.

All kernels are vectorized over stacked 2x2 matrices (shape (..., 2, 2)).
A non-positive det(T) is a barrier: vectorized kernels return +inf there,
the scalar API raises.
"""
from __future__ import annotations

import numpy as np

SHAPE = "shape"
SIZE = "size"
SHAPE_SIZE = "shape+size"

_CLASSIFICATION = {2: SHAPE, 55: SIZE, 7: SHAPE_SIZE, 9: SHAPE_SIZE}

METRIC_IDS = tuple(sorted(_CLASSIFICATION))


class BarrierError(ValueError):
    """det(T) <= 0; the objective treats this as +inf."""


def classification(metric_id: int) -> str:
    try:
        return _CLASSIFICATION[metric_id]
    except KeyError:
        raise ValueError(f"unknown metric id {metric_id}; known: {METRIC_IDS}") from None


def _det(T):
    return T[..., 0, 0] * T[..., 1, 1] - T[..., 0, 1] * T[..., 1, 0]


def _cofactor(T):
    """d(det T)/dT for 2x2 matrices."""
    C = np.empty_like(T)
    C[..., 0, 0] = T[..., 1, 1]
    C[..., 0, 1] = -T[..., 1, 0]
    C[..., 1, 0] = -T[..., 0, 1]
    C[..., 1, 1] = T[..., 0, 0]
    return C


def _inv(T, tau):
    inv = np.empty_like(T)
    inv[..., 0, 0] = T[..., 1, 1]
    inv[..., 0, 1] = -T[..., 0, 1]
    inv[..., 1, 0] = -T[..., 1, 0]
    inv[..., 1, 1] = T[..., 0, 0]
    return inv / tau[..., None, None]


def metric_values(metric_id: int, T: np.ndarray) -> np.ndarray:
    """mu(T) for stacked matrices; +inf where det(T) <= 0."""
    classification(metric_id)
    T = np.asarray(T, float)
    tau = _det(T)
    bad = tau <= 0.0
    safe_tau = np.where(bad, 1.0, tau)
    frob2 = (T**2).sum(axis=(-2, -1))
    if metric_id == 2:
        mu = frob2 / (2.0 * safe_tau) - 1.0
    elif metric_id == 55:
        mu = (tau - 1.0) ** 2
    else:
        finv2 = (_inv(T, safe_tau) ** 2).sum(axis=(-2, -1))
        mu = frob2 + finv2 - 4.0
        if metric_id == 9:
            mu = tau * mu
    return np.where(bad, np.inf, mu)


def metric_grads(metric_id: int, T: np.ndarray) -> np.ndarray:
    """d mu / dT, same stacking as `metric_values`; zero where det(T) <= 0
    (those points carry an infinite value and reject the configuration)."""
    classification(metric_id)
    T = np.asarray(T, float)
    tau = _det(T)
    bad = tau <= 0.0
    safe_tau = np.where(bad, 1.0, tau)[..., None, None]
    cof = _cofactor(T)
    if metric_id == 2:
        frob2 = (T**2).sum(axis=(-2, -1))[..., None, None]
        g = T / safe_tau - frob2 / (2.0 * safe_tau**2) * cof
    elif metric_id == 55:
        g = 2.0 * (tau - 1.0)[..., None, None] * cof
    else:
        inv = _inv(T, np.where(bad, 1.0, tau))
        inv_t = np.swapaxes(inv, -2, -1)
        g7 = 2.0 * T - 2.0 * inv_t @ inv @ inv_t
        if metric_id == 7:
            g = g7
        else:
            finv2 = (inv**2).sum(axis=(-2, -1))
            frob2 = (T**2).sum(axis=(-2, -1))
            mu7 = (frob2 + finv2 - 4.0)[..., None, None]
            g = mu7 * cof + tau[..., None, None] * g7
    return np.where(bad[..., None, None], 0.0, g)


def metric_value(metric_id: int, T) -> float:
    """Scalar metric evaluation; raises BarrierError when det(T) <= 0 for
    the metrics that require an invertible T (all four do in 2D)."""
    T = np.asarray(T, float)
    if T.shape != (2, 2):
        raise ValueError("T must be a 2x2 matrix")
    if _det(T) <= 0.0:
        raise BarrierError("det(T) <= 0")
    return float(metric_values(metric_id, T))


def metric_grad(metric_id: int, T) -> np.ndarray:
    T = np.asarray(T, float)
    if T.shape != (2, 2):
        raise ValueError("T must be a 2x2 matrix")
    if _det(T) <= 0.0:
        raise BarrierError("det(T) <= 0")
    return metric_grads(metric_id, T)
