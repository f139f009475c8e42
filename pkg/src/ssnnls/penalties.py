"""Sparsity penalties and their gradients.

Three families are provided, all evaluated on non-negative vectors (the
models constrain coefficients to the orthant, so the l1 norm is the plain
sum and differentiable):

* ``huber``: the smoothed l2 norm used to regularise ``||x||_2`` near 0,
* ``hoyer_ratio``: the scale-invariant ratio ``||x||_1 / ||x||_2``,
* ``diff_l1_l2``: the smoothed difference ``||x||_1 - huber(x, eps)``.

Each returns a ``PenaltyValue(value, grad)`` pair.  Penalties are
unscaled; callers apply their weights exactly once.
"""

from typing import NamedTuple

import numpy as np


class PenaltyValue(NamedTuple):
    value: float
    grad: np.ndarray


def _check_nonneg(x):
    if x.ndim != 1:
        raise ValueError(f"penalty input must be 1-d, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("penalty input must be non-empty")
    if np.min(x) < 0.0:
        raise ValueError("penalty input must be non-negative")


def huber(x: np.ndarray, eps: float) -> PenaltyValue:
    """Huber smoothing of the Euclidean norm.

    Value is ``||x||^2 / (2 eps)`` inside the ball ``||x|| <= eps`` and
    ``||x|| - eps/2`` outside; the gradient is continuous across the
    boundary.  Defined for any real x; requires ``eps > 0``.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=float)
    n2 = float(np.linalg.norm(x))
    if n2 <= eps:
        return PenaltyValue(n2 * n2 / (2.0 * eps), x / eps)
    return PenaltyValue(n2 - eps / 2.0, x / n2)


def hoyer_ratio(x: np.ndarray) -> PenaltyValue:
    """Ratio ``sum(x) / ||x||_2`` on the non-negative orthant minus the origin.

    The value lies in ``[1, sqrt(len(x))]``; gradient is
    ``1/||x|| - sum(x) * x / ||x||^3``.  Raises ``ValueError`` on negative
    entries or the zero vector, where the ratio is undefined.
    """
    x = np.asarray(x, dtype=float)
    _check_nonneg(x)
    n2 = float(np.linalg.norm(x))
    if n2 == 0.0:
        raise ValueError("hoyer ratio undefined at the zero vector")
    s = float(x.sum())
    grad = 1.0 / n2 - (s / n2**3) * x
    return PenaltyValue(s / n2, grad)


def diff_l1_l2(x: np.ndarray, eps: float) -> PenaltyValue:
    """Smoothed difference ``sum(x) - huber(x, eps)`` on the orthant.

    Smooth everywhere including the origin (value 0, gradient of ones).
    """
    x = np.asarray(x, dtype=float)
    _check_nonneg(x)
    h = huber(x, eps)
    return PenaltyValue(float(x.sum()) - h.value, 1.0 - h.grad)
