"""Euclidean projections onto the model's feasible sets.

All sets here are simple enough for closed-form or sort-and-threshold
projections: the non-negative orthant, weighted simplices (equality or
one-sided), per-group floor sets {y >= 0, sum(y) >= eps}, and the dummy
budget set projected in a diagonal metric.  The sort-based thresholding
lives in :mod:`ssnnls.kernels`.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import kernels


class SimplexMode(Enum):
    EQUALITY = "equality"
    UPPER_BOUND = "upper_bound"
    LOWER_BOUND = "lower_bound"


@dataclass(frozen=True)
class SimplexSpec:
    """Weighted simplex {y >= 0, sum(w*y) (=, <=, >=) radius}.

    ``weights`` defaults to all ones; weights must be strictly positive.
    """

    radius: float
    weights: Optional[np.ndarray] = None
    mode: SimplexMode = SimplexMode.EQUALITY


def project_nonneg(v: np.ndarray) -> np.ndarray:
    """Clip to the non-negative orthant."""
    return np.maximum(np.asarray(v, dtype=float), 0.0)


def project_simplex(v: np.ndarray, spec: SimplexSpec) -> np.ndarray:
    """Project onto the weighted simplex described by ``spec``.

    Equality mode requires ``radius >= 0``; the one-sided modes first try
    the clipped point and fall back to the equality projection when the
    bound is active.
    """
    v = np.asarray(v, dtype=float).ravel()
    if spec.weights is None:
        w = np.ones_like(v)
    else:
        w = np.asarray(spec.weights, dtype=float).ravel()
        if w.shape != v.shape:
            raise ValueError(f"weights shape {w.shape} does not match input {v.shape}")
        if np.any(w <= 0):
            raise ValueError("simplex weights must be strictly positive")
    r = float(spec.radius)

    if spec.mode is SimplexMode.EQUALITY:
        if r < 0:
            raise ValueError(f"equality radius must be non-negative, got {r}")
        if r == 0.0:
            return np.zeros_like(v)
        return kernels.weighted_simplex_project(v, w, r)

    clipped = np.maximum(v, 0.0)
    total = float(w @ clipped)
    if spec.mode is SimplexMode.UPPER_BOUND:
        if r < 0:
            raise ValueError(f"upper bound must be non-negative, got {r}")
        if total <= r:
            return clipped
        if r == 0.0:
            return np.zeros_like(v)
        return kernels.weighted_simplex_project(v, w, r)
    if spec.mode is SimplexMode.LOWER_BOUND:
        if total >= r:
            return clipped
        return kernels.weighted_simplex_project(v, w, r)
    raise ValueError(f"unknown simplex mode {spec.mode!r}")


def project_group_floor(v: np.ndarray, eps: float) -> np.ndarray:
    """Project a stacked group vector onto {y >= 0, sum(y) >= eps}."""
    if eps <= 0:
        raise ValueError(f"group floor must be positive, got {eps}")
    v = np.asarray(v, dtype=float).ravel()
    return kernels.group_floor_project(v, float(eps))


def project_dummy_budget(v: np.ndarray, eps: np.ndarray, budget: float,
                         metric_diag: Optional[np.ndarray] = None) -> np.ndarray:
    """Project dummies onto {d >= 0, sum(d/eps) <= budget} in a diagonal metric.

    With metric M = diag(metric_diag), minimises (d-v)' M (d-v) over the
    budget set; the substitution z = sqrt(M) d reduces it to a Euclidean
    weighted-simplex projection with weights 1/(eps*sqrt(M)).
    """
    v = np.asarray(v, dtype=float).ravel()
    eps = np.asarray(eps, dtype=float).ravel()
    if eps.shape != v.shape:
        raise ValueError(f"eps shape {eps.shape} does not match input {v.shape}")
    if np.any(eps <= 0):
        raise ValueError("eps must be strictly positive")
    if budget < 0:
        raise ValueError(f"budget must be non-negative, got {budget}")
    if metric_diag is None:
        m = np.ones_like(v)
    else:
        m = np.asarray(metric_diag, dtype=float).ravel()
        if m.shape != v.shape:
            raise ValueError(f"metric shape {m.shape} does not match input {v.shape}")
        if np.any(m <= 0):
            raise ValueError("metric diagonal must be strictly positive")
    sq = np.sqrt(m)
    z = sq * v
    spec = SimplexSpec(radius=float(budget), weights=1.0 / (eps * sq),
                       mode=SimplexMode.UPPER_BOUND)
    return project_simplex(z, spec) / sq
