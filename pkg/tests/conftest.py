"""Shared test oracles and fixtures.

The finite-difference gradient checker here is the independent oracle for
every backward test: it only ever calls forward evaluations.
"""

from __future__ import annotations

import numpy as np
import pytest

from crossmodal import counters


@pytest.fixture(autouse=True)
def _reset_warning_counters():
    counters.reset()
    yield


def finite_difference_grads(f, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradients of a scalar function of numpy arrays.

    `f` must be deterministic; arrays are perturbed in place and restored.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    """Largest |analytic - numeric| normalized by the numeric gradient scale."""
    scale = max((float(np.max(np.abs(g))) for g in numeric), default=0.0)
    scale = max(scale, 1e-8)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, float(np.max(np.abs(a - n))) / scale)
    return worst
