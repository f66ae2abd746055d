"""Completion, factor models, clustering, and scalar regression."""

import json

import numpy as np
import pytest

from fsvd.decomposition import FitConfig, fsvd
from fsvd.errors import (
    NonOrthogonalB,
    NotEnoughComponents,
    RankDeficientDesign,
    SubjectOutOfRange,
)
from fsvd.simlab import (
    GRID,
    gen_clustering,
    gen_completion,
    gen_regression,
    metric_ari,
    metric_dist,
)
from fsvd.tasks import (
    cluster,
    cluster_to_json,
    complete,
    factor_model,
    factor_to_json,
    regress,
    regression_to_json,
)


def _fitted(n=40, J=(6, 10), seed=0, R=3, nu=1e-7, homogeneous=False):
    ds, truth = gen_completion(n, J[0], J[1], homogeneous=homogeneous, seed=seed)
    return ds, truth, fsvd(ds, R=R, cfg=FitConfig(nu=nu, seed=seed))


# --- completion ---

def test_complete_is_score_weighted_sum():
    _, _, model = _fitted(n=15)
    t = np.linspace(0.0, 1.0, 11)
    manual = np.zeros(11)
    for c in model.components:
        manual += c.rho * c.a[3] * c.phi(t)
    np.testing.assert_allclose(complete(model, 3, t), manual, rtol=1e-12)


def test_complete_subject_out_of_range():
    _, _, model = _fitted(n=10)
    with pytest.raises(SubjectOutOfRange):
        complete(model, 10, GRID)
    with pytest.raises(SubjectOutOfRange):
        complete(model, -1, GRID)


def test_complete_tracks_truth_on_clean_data():
    ds, truth, model = _fitted(n=60, J=(15, 20), seed=1)
    errs = []
    for i in range(ds.n):
        est = complete(model, i, GRID)
        errs.append(float(np.mean((est - truth.subjectwise_X[i]) ** 2)))
    denom = float(np.mean(truth.subjectwise_X**2))
    assert float(np.mean(errs)) / denom < 0.25


# --- factor models ---

def test_factor_loading_orthonormal():
    _, _, model = _fitted()
    fm = factor_model(model, K=3)
    np.testing.assert_allclose(fm.loading.T @ fm.loading, np.eye(3), atol=1e-10)


def test_factor_default_b_is_identity():
    _, _, model = _fitted()
    fm = factor_model(model, K=2)
    np.testing.assert_array_equal(fm.B, np.eye(2))


def test_factor_fit_invariant_under_rotation():
    _, _, model = _fitted()
    theta = 0.7
    B = np.array(
        [
            [np.cos(theta), -np.sin(theta), 0.0],
            [np.sin(theta), np.cos(theta), 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    fm1 = factor_model(model, K=3)
    fm2 = factor_model(model, K=3, B=B)
    t = np.linspace(0.0, 1.0, 51)
    F1 = np.array([f(t) for f in fm1.factor_coeffs])
    F2 = np.array([f(t) for f in fm2.factor_coeffs])
    np.testing.assert_allclose(fm2.loading @ F2, fm1.loading @ F1, atol=1e-8)


def test_factor_column_space_invariant_under_rotation():
    _, _, model = _fitted()
    B = np.linalg.qr(np.random.default_rng(3).normal(size=(3, 3)))[0]
    L1 = factor_model(model, K=3).loading
    L2 = factor_model(model, K=3, B=B).loading
    # projectors onto the two column spaces agree
    np.testing.assert_allclose(L1 @ L1.T, L2 @ L2.T, atol=1e-8)


def test_factor_rejects_non_orthogonal_b():
    _, _, model = _fitted()
    with pytest.raises(NonOrthogonalB):
        factor_model(model, K=2, B=np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_factor_requires_enough_components():
    _, _, model = _fitted(R=2)
    with pytest.raises(NotEnoughComponents):
        factor_model(model, K=3)


# --- clustering ---

def test_cluster_single_group_trivial():
    ds, _, model = _fitted(n=15)
    cm = cluster(ds, model, H=1, K=2)
    assert np.all(cm.labels == 0)
    np.testing.assert_allclose(cm.pi, [1.0])


def test_cluster_separable_mixture_exact():
    # hand-built model with two clusters whose score separation is ten
    # times their spread and noiseless data: the k-means style start alone
    # should already split them perfectly, and EM should keep that split
    from fsvd.core import make_dataset
    from fsvd.decomposition import FsvdComponent, FsvdModel
    from fsvd.simlab import fourier_basis
    from fsvd.spline import SplineFunction, build_basis

    rng = np.random.default_rng(2)
    n = 30
    knots = np.linspace(0.0, 1.0, 9)
    basis = build_basis(knots)
    F = fourier_basis(knots, 2)
    labels_true = np.repeat([0, 1], n // 2)
    centers = np.array([[5.0, -2.0], [-5.0, 2.0]])
    scores = centers[labels_true] + rng.normal(0.0, 0.5, size=(n, 2))
    comps = []
    for r in range(2):
        s = scores[:, r]
        rho = float(np.linalg.norm(s))
        comps.append(
            FsvdComponent(
                rho=rho,
                a=s / rho,
                phi=SplineFunction(basis, F[r]),
                iterations_used=1,
                converged=True,
                nu=1e-8,
                objective_trace=np.array([0.0]),
            )
        )
    ids, times, values = [], [], []
    for i in range(n):
        t = np.sort(rng.uniform(0.0, 1.0, 10))
        v = sum(scores[i, r] * comps[r].phi(t) for r in range(2))
        ids.append(str(i))
        times.append(t)
        values.append(v)
    ds = make_dataset(ids, times, values)
    model = FsvdModel(basis, comps, [1e-8, 1e-8], ids)

    cm = cluster(ds, model, H=2, K=2, seed=2)
    assert metric_ari(labels_true, cm.initial_labels) == 1.0
    assert metric_ari(labels_true, cm.labels) == 1.0


def test_cluster_loglik_monotone_and_responsibilities():
    ds, truth = gen_clustering(40, 5, 9, H=3, seed=5)
    model = fsvd(ds, R=3, cfg=FitConfig(nu=1e-6, seed=5))
    cm = cluster(ds, model, H=3, K=3, seed=5)
    tr = cm.loglik_trace
    assert np.all(np.diff(tr) >= -1e-6 * (1.0 + np.abs(tr[:-1])))
    np.testing.assert_allclose(cm.responsibilities.sum(axis=1), 1.0, atol=1e-10)
    assert abs(float(cm.pi.sum()) - 1.0) < 1e-10
    assert cm.initial_labels.shape == (ds.n,)


def test_cluster_requires_enough_components():
    ds, _, model = _fitted(R=2)
    with pytest.raises(NotEnoughComponents):
        cluster(ds, model, H=2, K=3)
    with pytest.raises(ValueError):
        cluster(ds, model, H=0, K=2)


# --- regression ---

def test_regress_constant_response():
    _, _, model = _fitted(n=30)
    rm = regress(model, np.full(30, 4.5), R_use=3)
    assert abs(rm.alpha - 4.5) < 1e-8
    np.testing.assert_allclose(rm.beta_coeffs, 0.0, atol=1e-8)
    np.testing.assert_allclose(rm.beta_fn(GRID), 0.0, atol=1e-8)


def test_regress_recovers_score_coefficients():
    _, _, model = _fitted(n=30)
    Z = 2.0 * model.score_matrix()[:, 0]
    rm = regress(model, Z, R_use=3)
    np.testing.assert_allclose(rm.beta_coeffs, [2.0, 0.0, 0.0], atol=1e-6)
    assert metric_dist(rm.beta_fn(GRID), model.components[0].phi(GRID), grid=GRID) < 1e-6


def test_regress_invariant_under_component_sign_flip():
    _, _, model = _fitted(n=30)
    rng = np.random.default_rng(7)
    Z = model.score_matrix() @ np.array([1.0, -0.5, 0.25]) + rng.normal(0, 0.1, 30)
    b1 = regress(model, Z, R_use=3).beta_fn(GRID)
    flipped = model
    c = flipped.components[1]
    c.a = -c.a
    c.phi.g = -c.phi.g
    b2 = regress(flipped, Z, R_use=3).beta_fn(GRID)
    np.testing.assert_allclose(b2, b1, atol=1e-8)


def test_regress_rank_deficient_design():
    _, _, model = _fitted(n=4, J=(8, 12), R=3)
    with pytest.raises(RankDeficientDesign):
        regress(model, np.ones(4), R_use=3)


def test_regress_requires_enough_components():
    _, _, model = _fitted(R=2)
    with pytest.raises(NotEnoughComponents):
        regress(model, np.zeros(40), R_use=3)


def test_regress_close_to_true_beta_on_easy_data():
    ds, Z, truth = gen_regression(100, 10, 14, seed=11)
    model = fsvd(ds, R=3, cfg=FitConfig(nu=1e-7, seed=11))
    rm = regress(model, Z, R_use=3)
    assert metric_dist(rm.beta_fn(GRID), truth.beta_grid, grid=GRID) < 0.35


# --- serialization ---

def test_task_json_schemas_parse():
    ds, truth = gen_clustering(30, 6, 10, H=3, seed=6)
    model = fsvd(ds, R=3, cfg=FitConfig(nu=1e-6, seed=6))
    cm = cluster(ds, model, H=3, K=3, seed=6)
    rm = regress(model, np.arange(30, dtype=float), R_use=3)
    fm = factor_model(model, K=3)

    cj = json.loads(cluster_to_json(cm, model.subject_ids))
    assert cj["schema"] == "fsvd-cluster/1"
    assert len(cj["labels"]) == 30
    rj = json.loads(regression_to_json(rm))
    assert rj["schema"] == "fsvd-regress/1"
    assert len(rj["beta_coeffs"]) == 3
    fj = json.loads(factor_to_json(fm, model.subject_ids))
    assert fj["schema"] == "fsvd-factor/1"
    assert len(fj["loading"]) == 30
