"""Penalty cross-validation and rank selection."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import FunctionalDataset, make_dataset
from .decomposition import (
    FitConfig,
    FitWorkspace,
    FsvdModel,
    fit_rank_one,
)
from .errors import FsvdError, TooFewComponents
from .spline import SplineBasis, build_basis, default_knots


@dataclass
class CvResult:
    grid: np.ndarray
    errors: np.ndarray  # mean 5-fold CV error per candidate
    best_nu: float


N_FOLDS = 5


def _fold_assignments(
    ds: FunctionalDataset, seed: int, random_folds: bool
) -> list[np.ndarray]:
    """Per subject, the fold index of each (time-sorted) observation."""
    rng = np.random.default_rng(seed)
    out = []
    for s in ds.subjects:
        idx = np.arange(s.n_points)
        if random_folds:
            idx = rng.permutation(idx)
        folds = np.empty(s.n_points, dtype=int)
        folds[idx] = np.arange(s.n_points) % N_FOLDS
        out.append(folds)
    return out


class CvPlan:
    """Per-fold structures that depend only on (times, basis, folds).

    Residualization between deflation steps changes values but never
    times, so one plan serves every component of a model fit.
    """

    def __init__(
        self,
        ds: FunctionalDataset,
        basis: SplineBasis,
        seed: int,
        random_folds: bool = False,
    ):
        self.basis = basis
        folds = _fold_assignments(ds, seed, random_folds)
        self.fold_data = []
        for m in range(N_FOLDS):
            keep_subj, masks, t_in = [], [], []
            out_pos, out_inv_J, out_times = [], [], []
            for i, s in enumerate(ds.subjects):
                mask = folds[i] != m
                if not np.any(mask):
                    continue
                pos = len(keep_subj)
                keep_subj.append(i)
                masks.append(mask)
                t_in.append(s.times[mask])
                k_out = int(np.sum(~mask))
                if k_out:
                    out_pos.append(np.full(k_out, pos))
                    out_inv_J.append(np.full(k_out, 1.0 / s.n_points))
                    out_times.append(s.times[~mask])
            ids = [ds.subjects[i].id for i in keep_subj]
            if out_times:
                t_out = np.concatenate(out_times)
                S_out = basis.design(t_out)
                pos_idx = np.concatenate(out_pos).astype(int)
                inv_J_pt = np.concatenate(out_inv_J)
            else:
                S_out = np.zeros((0, basis.n_knots))
                pos_idx = np.zeros(0, dtype=int)
                inv_J_pt = np.zeros(0)
            ws_in = FitWorkspace(
                make_dataset(ids, t_in, [np.zeros(len(t)) for t in t_in]), basis
            )
            self.fold_data.append(
                (np.array(keep_subj, dtype=int), masks, ids, t_in, ws_in,
                 S_out, pos_idx, inv_J_pt)
            )


def cv_select_nu(
    ds: FunctionalDataset,
    a0: np.ndarray,
    grid: np.ndarray,
    cfg: FitConfig,
    basis: SplineBasis | None = None,
    random_folds: bool = False,
    plan: CvPlan | None = None,
) -> CvResult:
    """5-fold CV over the penalty grid for the first-component fit.

    Folds are cyclic in time order per subject (deterministic); a seeded
    random assignment is available behind `random_folds`.  Held-out folds
    with no points contribute 0; a subject left with no held-in points is
    dropped from that fold's fit and scores 0.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("nu grid must be nonempty and positive")
    if basis is None:
        basis = build_basis(default_knots(ds.all_times()))
    if plan is None:
        plan = CvPlan(ds, basis, cfg.seed, random_folds)
    order = np.argsort(grid, kind="stable")

    fold_errors = np.zeros((grid.size, N_FOLDS))
    for m in range(N_FOLDS):
        keep_subj, masks, ids, t_in, ws, S_out, pos_idx, inv_J_pt = plan.fold_data[m]
        v_in = [s.values[mask] for s, mask in zip(
            (ds.subjects[i] for i in keep_subj), masks)]
        y_out = np.concatenate(
            [ds.subjects[i].values[~mask] for i, mask in zip(keep_subj, masks)]
        ) if len(pos_idx) else np.zeros(0)
        ds_in = make_dataset(ids, t_in, v_in)
        a_start = np.asarray(a0, dtype=float)[keep_subj]
        nrm = np.linalg.norm(a_start)
        a_start = a_start / nrm if nrm > 0 else np.full(len(ids), len(ids) ** -0.5)

        a_warm = a_start
        for ci in order:
            nu = grid[ci]
            try:
                comp = fit_rank_one(
                    ds_in, basis, a_warm, replace(cfg, nu=nu), workspace=ws
                )
                a_warm = comp.a
            except FsvdError:
                fold_errors[ci, m] = np.inf
                continue
            fit_out = S_out @ (comp.rho * comp.phi.g)
            resid = y_out - comp.a[pos_idx] * fit_out
            fold_errors[ci, m] = float(np.sum(inv_J_pt * resid * resid))

    errors = fold_errors.mean(axis=1)
    finite = np.where(np.isfinite(errors))[0]
    if finite.size == 0:
        raise FsvdError("every CV candidate failed")
    # ties -> smaller nu
    by_nu = order[np.isfinite(errors[order])]
    best_idx = by_nu[np.argmin(errors[by_nu])]
    return CvResult(grid=grid, errors=errors, best_nu=float(grid[best_idx]))


def select_rank_ratio(rhos: np.ndarray, R_max: int) -> int:
    """Rank maximizing the gap ratio rho_r / rho_{r+1}; ties -> smaller r."""
    rhos = np.asarray(rhos, dtype=float)
    if rhos.size < 2:
        raise TooFewComponents("need at least 2 singular values")
    if np.any(rhos <= 0):
        raise ValueError("singular values must be positive")
    limit = min(R_max, rhos.size - 1)
    ratios = rhos[:limit] / rhos[1 : limit + 1]
    return int(np.argmax(ratios)) + 1


def select_rank_aic(ds: FunctionalDataset, model: FsvdModel, R_max: int) -> int:
    """AIC over truncation ranks, Gaussian per-subject residual variances."""
    if model.rank < R_max:
        raise TooFewComponents(
            f"model has {model.rank} components, R_max={R_max}"
        )
    n = ds.n
    J = ds.counts().astype(float)
    # cumulative fitted values per subject
    resid = [s.values.copy() for s in ds.subjects]
    aics = np.empty(R_max)
    for R in range(1, R_max + 1):
        comp = model.components[R - 1]
        sigma2 = np.empty(n)
        for i, s in enumerate(ds.subjects):
            resid[i] = resid[i] - comp.rho * comp.a[i] * comp.phi(s.times)
            sigma2[i] = max(float(resid[i] @ resid[i]) / J[i], 1e-12)
        aics[R - 1] = float(np.sum(J * np.log(sigma2))) + 2.0 * n * R
    return int(np.argmin(aics)) + 1
