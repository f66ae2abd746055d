"""Shared builders for the test suite."""

import numpy as np
import pytest

from fsvd.core import make_dataset
from fsvd.spline import SplineFunction, build_basis


def rank_one_dataset(knots, a, g, times_per_subject, noise_sd=0.0, seed=0):
    """Dataset with Y_ij = a_i * f(T_ij) (+ noise), f the spline (knots, g)."""
    rng = np.random.default_rng(seed)
    basis = build_basis(np.asarray(knots, dtype=float))
    f = SplineFunction(basis, np.asarray(g, dtype=float))
    ids, times, values = [], [], []
    for i, a_i in enumerate(np.asarray(a, dtype=float)):
        t = np.asarray(times_per_subject[i], dtype=float)
        v = a_i * f(t)
        if noise_sd > 0:
            v = v + rng.normal(0.0, noise_sd, size=len(t))
        ids.append(str(i))
        times.append(t)
        values.append(v)
    return make_dataset(ids, times, values), basis, f


@pytest.fixture
def small_grid_times():
    """The same 21-point regular grid for every subject."""
    return np.linspace(0.0, 1.0, 21)
