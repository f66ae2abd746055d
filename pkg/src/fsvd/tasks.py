"""Downstream applications built on a fitted decomposition.

Clustering works in the subject-score space: a Gaussian mixture on the
scores provides the starting point, then an EM algorithm on the raw
observations refines memberships under the per-cluster latent Gaussian
model (scores Gaussian per cluster, observation noise Gaussian with a
per-cluster variance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import logsumexp
from sklearn.mixture import GaussianMixture

from .core import FunctionalDataset
from .decomposition import FsvdModel, _dumps17
from .errors import (
    EmDivergence,
    FsvdError,
    NonOrthogonalB,
    NotEnoughComponents,
    RankDeficientDesign,
    SingularClusterCovariance,
    SubjectOutOfRange,
)
from .spline import SplineFunction


def complete(model: FsvdModel, subject_index: int, times: np.ndarray) -> np.ndarray:
    """Reconstructed trajectory of one subject at the requested times."""
    n = len(model.subject_ids)
    if not (0 <= subject_index < n):
        raise SubjectOutOfRange(f"subject {subject_index} not in [0, {n})")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.zeros(len(times))
    for c in model.components:
        out += c.rho * c.a[subject_index] * c.phi(times)
    return out


@dataclass
class FactorModel:
    K: int
    loading: np.ndarray  # n x K, orthonormal columns
    factor_coeffs: list[SplineFunction]  # factor curves, one per k
    B: np.ndarray


def factor_model(
    model: FsvdModel, K: int, B: np.ndarray | None = None
) -> FactorModel:
    """Loadings and factor curves from the first K components, rotated by B."""
    if model.rank < K:
        raise NotEnoughComponents(f"model rank {model.rank} < K={K}")
    if B is None:
        B = np.eye(K)
    B = np.asarray(B, dtype=float)
    if B.shape != (K, K) or np.max(np.abs(B.T @ B - np.eye(K))) > 1e-8:
        raise NonOrthogonalB("B must be K x K with B'B = I")
    A = np.column_stack([c.a for c in model.components[:K]])
    # deflation leaves the singular vectors only approximately orthogonal;
    # the closest orthonormal frame (polar factor) keeps the column space
    # and commutes with the rotation B
    U, _, Vt = np.linalg.svd(A, full_matrices=False)
    loading = (U @ Vt) @ B.T
    factors = []
    for k in range(K):
        g = np.zeros(model.basis.n_knots)
        for r in range(K):
            c = model.components[r]
            g += c.rho * B[k, r] * c.phi.g
        factors.append(SplineFunction(model.basis, g))
    return FactorModel(K=K, loading=loading, factor_coeffs=factors, B=B)


@dataclass
class EmConfig:
    max_iter: int = 100
    tol: float = 1e-6
    ridge: float = 1e-8


@dataclass
class ClusterModel:
    H: int
    K: int
    pi: np.ndarray
    mu: np.ndarray  # H x K
    sigma_mat: np.ndarray  # H x K x K
    noise_var: np.ndarray  # length H
    responsibilities: np.ndarray  # n x H
    labels: np.ndarray
    loglik_trace: np.ndarray
    initial_labels: np.ndarray = field(default=None)


def _log_gauss(y: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    J = len(y)
    try:
        cho = scipy.linalg.cho_factor(cov, check_finite=False)
    except scipy.linalg.LinAlgError:
        raise SingularClusterCovariance("marginal covariance not SPD") from None
    diff = y - mean
    sol = scipy.linalg.cho_solve(cho, diff, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    return -0.5 * (J * math.log(2.0 * math.pi) + logdet + float(diff @ sol))


def cluster(
    ds: FunctionalDataset,
    model: FsvdModel,
    H: int,
    K: int,
    em_cfg: EmConfig | None = None,
    seed: int | None = None,
) -> ClusterModel:
    """Model-based clustering of subjects in the leading score space."""
    if model.rank < K:
        raise NotEnoughComponents(f"model rank {model.rank} < K={K}")
    if H < 1:
        raise ValueError("H must be >= 1")
    em_cfg = em_cfg if em_cfg is not None else EmConfig()
    seed = model.config.seed if seed is None else seed
    n = ds.n
    scores = model.score_matrix()[:, :K]
    Phi = [
        np.column_stack([model.components[k].phi(s.times) for k in range(K)])
        for s in ds.subjects
    ]
    Y = [s.values for s in ds.subjects]
    J = ds.counts().astype(float)

    # initial clustering: full-covariance GMM on scores, k-means++, 10 restarts
    if H == 1:
        labels0 = np.zeros(n, dtype=int)
    else:
        gm = GaussianMixture(
            n_components=H,
            covariance_type="full",
            n_init=10,
            init_params="k-means++",
            random_state=seed,
        ).fit(scores)
        labels0 = gm.predict(scores)

    pi = np.empty(H)
    mu = np.empty((H, K))
    Sigma = np.empty((H, K, K))
    sig2 = np.empty(H)
    resid_all = np.array(
        [float((y - P @ s) @ (y - P @ s)) / j for y, P, s, j in zip(Y, Phi, scores, J)]
    )
    for h in range(H):
        members = labels0 == h
        cnt = int(members.sum())
        pi[h] = max(cnt, 1) / n
        if cnt == 0:
            mu[h] = scores.mean(axis=0)
            Sigma[h] = np.cov(scores.T).reshape(K, K)
            sig2[h] = float(resid_all.mean())
        else:
            mu[h] = scores[members].mean(axis=0)
            centered = scores[members] - mu[h]
            Sigma[h] = (centered.T @ centered) / cnt
            sig2[h] = max(float(resid_all[members].mean()), 1e-8)
        Sigma[h] += (em_cfg.ridge * max(np.trace(Sigma[h]), 1.0) / K) * np.eye(K)
    pi /= pi.sum()

    loglik_trace: list[float] = []
    resp = np.zeros((n, H))
    for _ in range(em_cfg.max_iter):
        # E-step on the raw observations
        logp = np.empty((n, H))
        for i in range(n):
            for h in range(H):
                cov = Phi[i] @ Sigma[h] @ Phi[i].T + sig2[h] * np.eye(int(J[i]))
                logp[i, h] = math.log(max(pi[h], 1e-300)) + _log_gauss(
                    Y[i], Phi[i] @ mu[h], cov
                )
        row_ll = logsumexp(logp, axis=1)
        loglik = float(np.sum(row_ll))
        if not math.isfinite(loglik):
            raise EmDivergence("non-finite log-likelihood")
        if loglik_trace and loglik < loglik_trace[-1] - 1e-6 * (1.0 + abs(loglik_trace[-1])):
            raise FsvdError(
                f"EM log-likelihood decreased: {loglik_trace[-1]!r} -> {loglik!r}"
            )
        converged = bool(
            loglik_trace
            and abs(loglik - loglik_trace[-1]) <= em_cfg.tol * (1.0 + abs(loglik_trace[-1]))
        )
        loglik_trace.append(loglik)
        resp = np.exp(logp - row_ll[:, None])
        if converged:
            break

        # M-step: conditional moments of the latent scores per cluster
        pi = resp.mean(axis=0)
        for h in range(H):
            w = resp[:, h]
            wsum = float(w.sum())
            if wsum <= 0:
                continue
            m_list = np.empty((n, K))
            V_list = np.empty((n, K, K))
            res_sq = np.empty(n)
            for i in range(n):
                C = Phi[i] @ Sigma[h] @ Phi[i].T + sig2[h] * np.eye(int(J[i]))
                try:
                    cho = scipy.linalg.cho_factor(C, check_finite=False)
                except scipy.linalg.LinAlgError:
                    raise SingularClusterCovariance("marginal covariance not SPD") from None
                G = Sigma[h] @ Phi[i].T @ scipy.linalg.cho_solve(
                    cho, np.eye(int(J[i])), check_finite=False
                )
                m_i = mu[h] + G @ (Y[i] - Phi[i] @ mu[h])
                V_i = Sigma[h] - G @ Phi[i] @ Sigma[h]
                m_list[i] = m_i
                V_list[i] = V_i
                fit_resid = Y[i] - Phi[i] @ m_i
                res_sq[i] = float(fit_resid @ fit_resid) + float(
                    np.trace(Phi[i] @ V_i @ Phi[i].T)
                )
            mu[h] = (w @ m_list) / wsum
            dm = m_list - mu[h]
            Sigma[h] = (
                np.einsum("i,ijk->jk", w, V_list)
                + (dm * w[:, None]).T @ dm
            ) / wsum
            Sigma[h] = (Sigma[h] + Sigma[h].T) / 2.0
            Sigma[h] += (em_cfg.ridge * max(np.trace(Sigma[h]), 1.0) / K) * np.eye(K)
            sig2[h] = max(float(w @ res_sq) / float(w @ J), 1e-8)

    labels = np.argmax(resp, axis=1)
    return ClusterModel(
        H=H,
        K=K,
        pi=pi,
        mu=mu,
        sigma_mat=Sigma,
        noise_var=sig2,
        responsibilities=resp,
        labels=labels,
        loglik_trace=np.array(loglik_trace),
        initial_labels=labels0,
    )


@dataclass
class RegressionModel:
    alpha: float
    beta_coeffs: np.ndarray
    beta_fn: SplineFunction
    score_matrix_cond: float


def regress(model: FsvdModel, Z: np.ndarray, R_use: int = 3) -> RegressionModel:
    """Least squares of a scalar response on the leading subject scores."""
    if model.rank < R_use:
        raise NotEnoughComponents(f"model rank {model.rank} < R_use={R_use}")
    Z = np.asarray(Z, dtype=float)
    n = len(model.subject_ids)
    if Z.shape != (n,):
        raise ValueError(f"Z has length {Z.size}, model has n={n}")
    if n <= R_use + 1:
        raise RankDeficientDesign(f"need n > R_use + 1 = {R_use + 1}")
    X = np.column_stack([np.ones(n), model.score_matrix()[:, :R_use]])
    cond = float(np.linalg.cond(X))
    sol, _, rank, _ = np.linalg.lstsq(X, Z, rcond=None)
    if rank < R_use + 1:
        raise RankDeficientDesign(f"design rank {rank} < {R_use + 1}")
    alpha = float(sol[0])
    beta = sol[1:]
    g = np.zeros(model.basis.n_knots)
    for r in range(R_use):
        g += beta[r] * model.components[r].phi.g
    return RegressionModel(
        alpha=alpha,
        beta_coeffs=beta,
        beta_fn=SplineFunction(model.basis, g),
        score_matrix_cond=cond,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def cluster_to_json(cm: ClusterModel, subject_ids: list[str]) -> str:
    return _dumps17(
        {
            "schema": "fsvd-cluster/1",
            "H": cm.H,
            "K": cm.K,
            "pi": list(cm.pi),
            "mu": [list(row) for row in cm.mu],
            "sigma_mat": [[list(r) for r in m] for m in cm.sigma_mat],
            "noise_var": list(cm.noise_var),
            "subject_ids": list(subject_ids),
            "labels": [int(x) for x in cm.labels],
            "initial_labels": [int(x) for x in cm.initial_labels],
            "responsibilities": [list(row) for row in cm.responsibilities],
            "loglik_trace": list(cm.loglik_trace),
        }
    )


def regression_to_json(rm: RegressionModel) -> str:
    return _dumps17(
        {
            "schema": "fsvd-regress/1",
            "alpha": rm.alpha,
            "beta_coeffs": list(rm.beta_coeffs),
            "beta_knot_values": list(rm.beta_fn.g),
            "design_condition": rm.score_matrix_cond,
        }
    )


def factor_to_json(fm: FactorModel, subject_ids: list[str]) -> str:
    return _dumps17(
        {
            "schema": "fsvd-factor/1",
            "K": fm.K,
            "B": [list(row) for row in fm.B],
            "subject_ids": list(subject_ids),
            "loading": [list(row) for row in fm.loading],
            "factor_knot_values": [list(f.g) for f in fm.factor_coeffs],
        }
    )
