import numpy as np
import pytest

from ssnnls import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger jit compilation once so timed tests measure steady-state."""
    v = np.array([0.3, -0.1, 0.5])
    kernels.simplex_project(v, 1.0)
    kernels.weighted_simplex_project(v, np.array([1.0, 2.0, 0.5]), 1.0)
    kernels.group_floor_project(v, 0.05)
    eye = np.eye(3)
    kernels.admm_nonneg(eye, v, v, v, np.zeros(3), 1.0, 1e-6, 1e-6, 10, 0)
    kernels.admm_grouped(eye, v, v, np.array([0, 2, 3], dtype=np.int64),
                         np.array([0.05, 0.05]), np.array([0.01, 0.01]),
                         np.array([0.0, 0.0]), np.array([1.0, 1.0]), 1.0,
                         np.abs(v), np.zeros(3), np.array([0.01, 0.01]),
                         np.zeros(2), 1.0, 1e-6, 1e-6, 10)
