"""Simulation generators, evaluation metrics, baselines, and the bench harness.

All generators are pure functions of (parameters, seed) and draw from a
single `numpy` Generator in a fixed order, so outputs are bit-reproducible.
Truth objects carry dense-grid samples of the generating functions on a
fixed 201-point grid for the function metrics.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import FunctionalDataset, make_dataset
from .decomposition import FitConfig, fsvd
from .errors import (
    EmptyCluster,
    LengthMismatch,
    ShapeMismatch,
    ZeroDenominator,
    ZeroNorm,
)
from .spline import WlsRow, build_basis, solve_penalized_wls

GRID_SIZE = 201
GRID = np.linspace(0.0, 1.0, GRID_SIZE)
K_TRUE = 3
SCENARIOS = ("completion_hetero", "completion_homo", "clustering", "regression", "factor")


# ---------------------------------------------------------------------------
# generator building blocks
# ---------------------------------------------------------------------------

def fourier_basis(t: np.ndarray, n_funcs: int) -> np.ndarray:
    """First `n_funcs` non-constant Fourier functions, rows indexed by k."""
    t = np.asarray(t, dtype=float)
    out = np.empty((n_funcs, len(t)))
    for k in range(1, n_funcs + 1):
        freq = 2.0 * math.pi * ((k + 1) // 2)
        out[k - 1] = math.sqrt(2.0) * (
            np.sin(freq * t) if k % 2 == 1 else np.cos(freq * t)
        )
    return out


def gram_schmidt(cols: np.ndarray) -> np.ndarray:
    """Orthonormalize the columns, in order."""
    out = cols.astype(float).copy()
    for k in range(out.shape[1]):
        for j in range(k):
            out[:, k] -= (out[:, j] @ out[:, k]) * out[:, j]
        nrm = np.linalg.norm(out[:, k])
        if nrm == 0:
            raise ValueError("linearly dependent columns in Gram-Schmidt")
        out[:, k] /= nrm
    return out


def singular_value_profile(K: int = K_TRUE) -> np.ndarray:
    k = np.arange(1, K + 1)
    return 2.0 * np.exp((K - k + 1) / 2.0)


def _sin_loadings(n: int, K: int = K_TRUE) -> np.ndarray:
    i = np.arange(1, n + 1)[:, None]
    k = np.arange(1, K + 1)[None, :]
    return np.sin(k * math.pi * (i + n / 4.0) / (2.0 * n))


@dataclass
class ScenarioTruth:
    variant: str
    grid: np.ndarray
    true_functions: np.ndarray  # K x 201 samples of phi_k (or F_k)
    true_vectors: np.ndarray  # n x K orthonormal columns
    subjectwise_X: np.ndarray  # n x 201
    noise_vars: np.ndarray  # length n
    labels: np.ndarray | None = None
    beta_grid: np.ndarray | None = None
    basis_coefs: np.ndarray = field(default=None)  # n x (#Fourier funcs)


def _sample_observations(
    rng: np.random.Generator,
    coefs: np.ndarray,
    n_basis: int,
    J_low: int,
    J_high: int,
    noise_sd: np.ndarray,
) -> FunctionalDataset:
    """Irregular noisy samples of X_i = sum_g coefs[i, g] * fourier_g."""
    n = coefs.shape[0]
    ids, times, values = [], [], []
    for i in range(n):
        J_i = int(rng.integers(J_low, J_high + 1))
        t = np.sort(rng.uniform(0.0, 1.0, size=J_i))
        x = coefs[i] @ fourier_basis(t, n_basis)
        eps = rng.normal(0.0, noise_sd[i], size=J_i)
        ids.append(str(i))
        times.append(t)
        values.append(x + eps)
    return make_dataset(ids, times, values)


def gen_completion(
    n: int, J_low: int, J_high: int, homogeneous: bool, seed: int
) -> tuple[FunctionalDataset, ScenarioTruth]:
    if n < K_TRUE or not (1 <= J_low <= J_high):
        raise ValueError("need n >= 3 and 1 <= J_low <= J_high")
    rng = np.random.default_rng(seed)
    rho = singular_value_profile()
    if homogeneous:
        a = np.zeros((n, K_TRUE))
        b = rng.normal(0.0, 1.0 / math.sqrt(n), size=(n, K_TRUE))
        sigma2 = np.full(n, float(np.sum(rho**2)) / n * 0.05)
    else:
        a = gram_schmidt(_sin_loadings(n))
        b = rng.normal(0.0, np.abs(a))
        sigma2 = 2.0 * (a**2 @ rho**2) * 0.05
    coefs = (a + b) * rho[None, :]
    ds = _sample_observations(rng, coefs, K_TRUE, J_low, J_high, np.sqrt(sigma2))
    truth = ScenarioTruth(
        variant="completion_homo" if homogeneous else "completion_hetero",
        grid=GRID,
        true_functions=fourier_basis(GRID, K_TRUE),
        true_vectors=a if not homogeneous else np.zeros((n, K_TRUE)),
        subjectwise_X=coefs @ fourier_basis(GRID, K_TRUE),
        noise_vars=sigma2,
        basis_coefs=coefs,
    )
    return ds, truth


def gen_clustering(
    n: int, J_low: int, J_high: int, H: int = 3, seed: int = 0
) -> tuple[FunctionalDataset, ScenarioTruth]:
    if n < H:
        raise ValueError("need n >= H")
    rng = np.random.default_rng(seed)
    rho = singular_value_profile()
    Z = None
    for _ in range(20):
        cand = rng.integers(0, H, size=n)
        if len(np.unique(cand)) == H:
            Z = cand
            break
    if Z is None:
        raise EmptyCluster(f"could not draw {H} nonempty clusters in 20 tries")
    centers = rng.uniform(-1.0, 1.0, size=(H, K_TRUE))
    a = gram_schmidt(centers[Z])
    b = rng.normal(0.0, math.sqrt(0.2 / n), size=(n, K_TRUE))
    # shared noise level: average expected squared norm, times 5%
    mean_sq = float(np.mean((a**2 + 0.2 / n) @ rho**2))
    sigma2 = np.full(n, mean_sq * 0.05)
    coefs = (a + b) * rho[None, :]
    ds = _sample_observations(rng, coefs, K_TRUE, J_low, J_high, np.sqrt(sigma2))
    truth = ScenarioTruth(
        variant="clustering",
        grid=GRID,
        true_functions=fourier_basis(GRID, K_TRUE),
        true_vectors=a,
        subjectwise_X=coefs @ fourier_basis(GRID, K_TRUE),
        noise_vars=sigma2,
        labels=Z,
        basis_coefs=coefs,
    )
    return ds, truth


def regression_beta_coefs() -> np.ndarray:
    k = np.arange(1, 4)
    return (4.0 - k) ** (-1.2) * (-1.0) ** k


def gen_regression(
    n: int, J_low: int, J_high: int, seed: int, noise_free: bool = False
) -> tuple[FunctionalDataset, np.ndarray, ScenarioTruth]:
    ds, truth = gen_completion(n, J_low, J_high, homogeneous=False, seed=seed)
    rng = np.random.default_rng(seed + 10_000_019)
    beta_k = regression_beta_coefs()
    inner = truth.basis_coefs @ beta_k  # <beta, X_i> by Fourier orthonormality
    # the noise scale below is a literal standard-deviation-like quantity
    # placed in the variance slot; kept as stated
    v = math.sqrt(float(np.sum(inner**2)) / n) * 0.05
    theta = np.zeros(n) if noise_free else rng.normal(0.0, math.sqrt(v), size=n)
    Z = inner + theta
    truth.variant = "regression"
    truth.beta_grid = beta_k @ fourier_basis(GRID, K_TRUE)
    return ds, Z, truth


def gen_factor(
    n: int, J_low: int, J_high: int, seed: int
) -> tuple[FunctionalDataset, ScenarioTruth]:
    if n < K_TRUE:
        raise ValueError("need n >= 3")
    rng = np.random.default_rng(seed)
    rho = singular_value_profile()
    a = gram_schmidt(_sin_loadings(n))
    c = gram_schmidt(rng.normal(size=(7, K_TRUE))).T  # K x 7, orthonormal rows
    sigma2 = (a**2 @ rho**2) * 0.05
    coefs = (a * rho[None, :]) @ c  # n x 7 Fourier coefficients
    ds = _sample_observations(rng, coefs, 7, J_low, J_high, np.sqrt(sigma2))
    truth = ScenarioTruth(
        variant="factor",
        grid=GRID,
        true_functions=c @ fourier_basis(GRID, 7),  # F_k on the grid
        true_vectors=a,
        subjectwise_X=coefs @ fourier_basis(GRID, 7),
        noise_vars=sigma2,
        basis_coefs=coefs,
    )
    return ds, truth


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _trap_w(grid: np.ndarray) -> np.ndarray:
    w = np.empty_like(grid)
    w[1:-1] = (grid[2:] - grid[:-2]) / 2.0
    w[0] = (grid[1] - grid[0]) / 2.0
    w[-1] = (grid[-1] - grid[-2]) / 2.0
    return w


def metric_dist(u: np.ndarray, v: np.ndarray, grid: np.ndarray | None = None) -> float:
    """Sine of the principal angle; sign-invariant, in [0, 1]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise LengthMismatch(f"{u.shape} vs {v.shape}")
    w = _trap_w(grid) if grid is not None else np.ones_like(u)
    nu = float(np.sum(w * u * u))
    nv = float(np.sum(w * v * v))
    if nu <= 0.0 or nv <= 0.0:
        raise ZeroNorm("zero-norm argument")
    cos2 = float(np.sum(w * u * v)) ** 2 / (nu * nv)
    return math.sqrt(max(1.0 - min(cos2, 1.0), 0.0))


def metric_nmse_x(truth: np.ndarray, est: np.ndarray, grid: np.ndarray = GRID) -> float:
    truth = np.asarray(truth, dtype=float)
    est = np.asarray(est, dtype=float)
    if truth.shape != est.shape:
        raise ShapeMismatch(f"{truth.shape} vs {est.shape}")
    w = _trap_w(grid)
    denom = float(np.sum((truth**2) @ w))
    if denom <= 0.0:
        raise ZeroDenominator("truth has zero total energy")
    return 100.0 * float(np.sum(((truth - est) ** 2) @ w)) / denom


def metric_ari(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Hubert-Arabie adjusted Rand index."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    n = len(a)
    if n < 2:
        raise LengthMismatch("need at least 2 labels")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    cont = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(cont, (ai, bi), 1.0)

    def comb2(x):
        return x * (x - 1.0) / 2.0

    sum_ij = float(np.sum(comb2(cont)))
    sum_a = float(np.sum(comb2(cont.sum(axis=1))))
    sum_b = float(np.sum(comb2(cont.sum(axis=0))))
    expected = sum_a * sum_b / comb2(n)
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)


def metric_nmse_loadings(A: np.ndarray, Ahat: np.ndarray) -> float:
    """Procrustes-aligned loading error, percent of ||A||^2 = K."""
    A = np.asarray(A, dtype=float)
    Ahat = np.asarray(Ahat, dtype=float)
    if A.shape != Ahat.shape:
        raise ShapeMismatch(f"{A.shape} vs {Ahat.shape}")
    K = A.shape[1]
    for M, name in ((A, "A"), (Ahat, "Ahat")):
        if np.max(np.abs(M.T @ M - np.eye(K))) > 1e-6:
            raise ValueError(f"{name} columns are not orthonormal")
    U, _, Vt = np.linalg.svd(Ahat.T @ A)
    M = U @ Vt
    return 100.0 * float(np.sum((A - Ahat @ M) ** 2)) / K


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def smoothing_spline_complete(
    ds: FunctionalDataset,
    grid: np.ndarray = GRID,
    nu_grid: np.ndarray | None = None,
) -> np.ndarray:
    """Per-subject smoothing spline with per-subject 5-fold CV penalty."""
    if nu_grid is None:
        nu_grid = np.logspace(-8, 1, 20)
    out = np.empty((ds.n, len(grid)))
    for i, s in enumerate(ds.subjects):
        t, y = s.times, s.values
        J = len(t)
        if J < 3:
            out[i] = float(np.mean(y))
            continue
        folds = np.arange(J) % 5
        errs = np.full(len(nu_grid), 0.0)
        counts = 0
        for m in range(5):
            mask = folds != m
            if mask.sum() < 3 or (~mask).sum() == 0:
                continue
            counts += 1
            basis = build_basis(np.unique(t[mask]))
            for ci, nu in enumerate(nu_grid):
                f = solve_penalized_wls(
                    basis, [WlsRow(1.0, t[mask], y[mask], 1.0 / J)], nu
                )
                resid = y[~mask] - f(t[~mask])
                errs[ci] += float(resid @ resid) / J
        best_nu = nu_grid[int(np.argmin(errs))] if counts else nu_grid[len(nu_grid) // 2]
        basis = build_basis(np.unique(t))
        f = solve_penalized_wls(basis, [WlsRow(1.0, t, y, 1.0 / J)], best_nu)
        out[i] = f(grid)
    return out


def raw_grid_svd_loadings(ds: FunctionalDataset, K: int) -> np.ndarray:
    """Matrix-SVD loadings after regularizing times to an equispaced grid.

    Each grid value is the average of observations within +-0.2, or the
    nearest observation when the window is empty.
    """
    J = int(round(float(np.mean(ds.counts()))))
    grid = np.linspace(0.0, 1.0, max(J, 2))
    Y = np.empty((ds.n, len(grid)))
    for i, s in enumerate(ds.subjects):
        for j, t in enumerate(grid):
            d = np.abs(s.times - t)
            close = d < 0.2
            Y[i, j] = (
                float(np.mean(s.values[close]))
                if np.any(close)
                else float(s.values[np.argmin(d)])
            )
    U, _, _ = np.linalg.svd(Y, full_matrices=False)
    return U[:, :K]


# ---------------------------------------------------------------------------
# bench harness
# ---------------------------------------------------------------------------

@dataclass
class BenchRow:
    scenario: str
    n: int
    J_low: int
    J_high: int
    method: str
    metric: str
    mean: float
    sd: float
    failures: int


def _run_replicate(
    scenario: str,
    n: int,
    J_low: int,
    J_high: int,
    methods: tuple[str, ...],
    rep_seed: int,
    cfg: FitConfig,
) -> dict:
    """Metric values (and raw payloads) for one replicate of one cell."""
    from . import tasks

    out: dict = {}
    if scenario in ("completion_hetero", "completion_homo"):
        ds, truth = gen_completion(
            n, J_low, J_high, homogeneous=(scenario == "completion_homo"), seed=rep_seed
        )
        if "fsvd" in methods:
            model = fsvd(ds, R=K_TRUE, cfg=cfg)
            phis = truth.true_functions
            for k, comp in enumerate(model.components):
                out[("fsvd", f"dist_k{k + 1}")] = metric_dist(
                    comp.phi(GRID), phis[k], grid=GRID
                )
            est = np.array([tasks.complete(model, i, GRID) for i in range(ds.n)])
            out[("fsvd", "nmse_x")] = metric_nmse_x(truth.subjectwise_X, est)
        if "spline" in methods:
            est = smoothing_spline_complete(ds)
            out[("spline", "nmse_x")] = metric_nmse_x(truth.subjectwise_X, est)
    elif scenario == "clustering":
        ds, truth = gen_clustering(n, J_low, J_high, H=3, seed=rep_seed)
        if "fsvd" in methods:
            model = fsvd(ds, R=K_TRUE, cfg=cfg)
            cm = tasks.cluster(ds, model, H=3, K=K_TRUE, seed=rep_seed)
            out[("fsvd", "ari_em")] = metric_ari(truth.labels, cm.labels)
            out[("fsvd", "ari_init")] = metric_ari(truth.labels, cm.initial_labels)
    elif scenario == "regression":
        ds, Z, truth = gen_regression(n, J_low, J_high, seed=rep_seed)
        if "fsvd" in methods:
            model = fsvd(ds, R=K_TRUE, cfg=cfg)
            rm = tasks.regress(model, Z, R_use=K_TRUE)
            beta_hat = rm.beta_fn(GRID)
            out[("fsvd", "beta_rmse")] = float(
                np.sqrt(np.mean((beta_hat - truth.beta_grid) ** 2))
            )
            out[("fsvd", "beta_grid")] = beta_hat
    elif scenario == "factor":
        ds, truth = gen_factor(n, J_low, J_high, seed=rep_seed)
        if "fsvd" in methods:
            model = fsvd(ds, R=K_TRUE, cfg=cfg)
            fm = tasks.factor_model(model, K=K_TRUE)
            out[("fsvd", "nmse_a")] = metric_nmse_loadings(truth.true_vectors, fm.loading)
        if "svd" in methods:
            Ahat = raw_grid_svd_loadings(ds, K_TRUE)
            out[("svd", "nmse_a")] = metric_nmse_loadings(truth.true_vectors, Ahat)
    else:
        raise ValueError(f"unknown scenario: {scenario!r}")
    return out


def run_bench(
    scenario: str,
    n_list: list[int],
    j_specs: list[tuple[int, int]],
    replicates: int,
    methods: tuple[str, ...] = ("fsvd",),
    seed: int = 0,
    cfg: FitConfig | None = None,
    threads: int = 1,
    return_replicates: bool = False,
):
    """Mean/sd of every metric per (cell, method); failures are counted.

    Replicate r of any cell uses sub-seed `seed + r`; aggregation happens
    in replicate order so results do not depend on `threads`.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    base_cfg = cfg if cfg is not None else FitConfig()
    rows: list[BenchRow] = []
    all_records: dict = {}
    for n in n_list:
        for J_low, J_high in j_specs:
            def job(r):
                rep_cfg = FitConfig(
                    tau=base_cfg.tau,
                    max_iter=base_cfg.max_iter,
                    nu=base_cfg.nu,
                    seed=seed + r,
                    nu_grid=base_cfg.nu_grid,
                    n_starts=base_cfg.n_starts,
                    cv_random_folds=base_cfg.cv_random_folds,
                )
                try:
                    return _run_replicate(
                        scenario, n, J_low, J_high, methods, seed + r, rep_cfg
                    )
                except Exception as exc:  # replicate failures are reported, not fatal
                    return {"__error__": repr(exc)}

            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    results = list(pool.map(job, range(replicates)))
            else:
                results = [job(r) for r in range(replicates)]

            failures = sum(1 for r in results if "__error__" in r)
            metrics: dict[tuple[str, str], list[float]] = {}
            for res in results:
                for key, val in res.items():
                    if key == "__error__" or not np.isscalar(val):
                        continue
                    metrics.setdefault(key, []).append(float(val))
            for (method, metric), vals in sorted(metrics.items()):
                arr = np.array(vals)
                rows.append(
                    BenchRow(
                        scenario, n, J_low, J_high, method, metric,
                        float(arr.mean()),
                        float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                        failures,
                    )
                )
            all_records[(n, J_low, J_high)] = results
    if return_replicates:
        return rows, all_records
    return rows


def bench_rows_to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["scenario", "n", "J_low", "J_high", "method", "metric", "mean", "sd", "failures"]
    )
    for r in rows:
        writer.writerow(
            [r.scenario, r.n, r.J_low, r.J_high, r.method, r.metric,
             f"{r.mean:.17g}", f"{r.sd:.17g}", r.failures]
        )
    return buf.getvalue()


def format_bench_table(rows: list[BenchRow]) -> str:
    header = f"{'scenario':<18} {'n':>4} {'J':>7} {'method':<8} {'metric':<10} {'mean':>10} {'sd':>10} {'fail':>4}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.scenario:<18} {r.n:>4} {r.J_low:>3}-{r.J_high:<3} {r.method:<8} "
            f"{r.metric:<10} {r.mean:>10.4f} {r.sd:>10.4f} {r.failures:>4}"
        )
    return "\n".join(lines)
