"""Penalty cross-validation and rank selection."""

import numpy as np
import pytest

from conftest import rank_one_dataset
from fsvd.decomposition import FitConfig, fsvd
from fsvd.errors import TooFewComponents
from fsvd.selection import (
    CvPlan,
    cv_select_nu,
    select_rank_aic,
    select_rank_ratio,
)
from fsvd.simlab import fourier_basis
from fsvd.core import make_dataset
from fsvd.spline import build_basis

KNOTS = np.linspace(0.0, 1.0, 9)


def _noiseless_ds(n=20, seed=0, noise_sd=0.0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n)
    a /= np.linalg.norm(a)
    g = np.sin(2.0 * np.pi * KNOTS) + 0.5
    times = [np.sort(rng.uniform(0.0, 1.0, 15)) for _ in range(n)]
    ds, basis, _ = rank_one_dataset(KNOTS, a, g, times, noise_sd=noise_sd, seed=seed)
    return ds, basis, a


def test_singleton_grid():
    ds, basis, a = _noiseless_ds()
    res = cv_select_nu(ds, a, np.array([1e-4]), FitConfig(), basis=basis)
    assert res.best_nu == 1e-4
    assert res.errors.shape == (1,)


def test_noiseless_prefers_smallest_nu_and_monotone_curve():
    ds, basis, a = _noiseless_ds()
    grid = np.logspace(-8, 0, 9)
    res = cv_select_nu(ds, a, grid, FitConfig(), basis=basis)
    assert res.best_nu == grid[0]
    # with no noise, more smoothing can only hurt held-out error
    assert np.all(np.diff(res.errors) >= -1e-12)


def test_grid_permutation_invariance():
    ds, basis, a = _noiseless_ds(noise_sd=0.2, seed=3)
    grid = np.logspace(-6, 0, 7)
    res1 = cv_select_nu(ds, a, grid, FitConfig(), basis=basis)
    perm = np.array([3, 0, 6, 1, 5, 2, 4])
    res2 = cv_select_nu(ds, a, grid[perm], FitConfig(), basis=basis)
    assert res2.best_nu == res1.best_nu
    np.testing.assert_allclose(res2.errors, res1.errors[perm], rtol=1e-12)


def test_plan_reuse_matches_fresh_run():
    ds, basis, a = _noiseless_ds(noise_sd=0.2, seed=4)
    grid = np.logspace(-6, 0, 5)
    cfg = FitConfig()
    plan = CvPlan(ds, basis, cfg.seed)
    res1 = cv_select_nu(ds, a, grid, cfg, basis=basis)
    res2 = cv_select_nu(ds, a, grid, cfg, basis=basis, plan=plan)
    np.testing.assert_array_equal(res1.errors, res2.errors)
    assert res1.best_nu == res2.best_nu


def test_nu_grid_validation():
    ds, basis, a = _noiseless_ds()
    with pytest.raises(ValueError):
        cv_select_nu(ds, a, np.array([]), FitConfig(), basis=basis)
    with pytest.raises(ValueError):
        cv_select_nu(ds, a, np.array([1e-4, 0.0]), FitConfig(), basis=basis)


def test_rank_ratio_examples():
    assert select_rank_ratio(np.array([10.0, 1.0, 0.9]), 3) == 1
    assert select_rank_ratio(np.array([10.0, 9.0, 1.0]), 3) == 2


def test_rank_ratio_scale_invariance():
    rhos = np.array([7.0, 3.0, 2.5, 0.4])
    assert select_rank_ratio(rhos, 4) == select_rank_ratio(17.0 * rhos, 4)


def test_rank_ratio_respects_r_max():
    rhos = np.array([10.0, 9.5, 9.0, 0.1])
    assert select_rank_ratio(rhos, 1) == 1


def test_rank_ratio_needs_two_values():
    with pytest.raises(TooFewComponents):
        select_rank_ratio(np.array([1.0]), 3)
    with pytest.raises(ValueError):
        select_rank_ratio(np.array([1.0, -1.0]), 3)


def test_rank_aic_recovers_rank_two():
    # two strong orthogonal spline components plus modest noise: the noise
    # floor is reached after two components, so AIC should stop at 2
    rng = np.random.default_rng(5)
    n = 30
    basis = build_basis(KNOTS)
    a1 = rng.normal(size=n)
    a1 /= np.linalg.norm(a1)
    a2 = rng.normal(size=n)
    a2 -= (a1 @ a2) * a1
    a2 /= np.linalg.norm(a2)
    F = fourier_basis(KNOTS, 2)
    times = [np.linspace(0.0, 1.0, 41)] * n
    ids, values = [], []
    from fsvd.spline import SplineFunction

    for i in range(n):
        g = 6.0 * a1[i] * F[0] + 2.0 * a2[i] * F[1]
        v = SplineFunction(basis, g)(times[i]) + rng.normal(0.0, 0.1, 41)
        values.append(v)
        ids.append(str(i))
    ds = make_dataset(ids, times, values)
    model = fsvd(ds, R=3, cfg=FitConfig(nu=1e-9), basis=basis)
    assert select_rank_aic(ds, model, 3) == 2


def test_rank_aic_requires_enough_components():
    ds, basis, a = _noiseless_ds()
    model = fsvd(ds, R=1, cfg=FitConfig(nu=1e-8), basis=basis)
    with pytest.raises(TooFewComponents):
        select_rank_aic(ds, model, 2)
