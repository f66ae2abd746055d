"""Rank-one alternating minimization with spline smoothing, plus deflation.

Each component is fit by alternating an exact penalized spline solve for
the scaled function against an exact closed-form update of the subject
vector; higher components are obtained by subtracting the fitted ones and
repeating.  Both half-steps minimize the same convex objective, so the
objective trace is non-increasing and is checked on every iteration.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .core import FunctionalDataset
from .errors import (
    AllMissingColumn,
    AllZeroInput,
    DegenerateScale,
    DimensionMismatch,
    FsvdError,
    SchemaError,
)
from .oracle import fix_sign
from .spline import SplineBasis, SplineFunction, build_basis, default_knots, l2_norm

MODEL_SCHEMA = "fsvd-model/1"

#: default CV grid: 20 log-spaced penalty candidates
DEFAULT_NU_GRID = np.logspace(-8, 1, 20)


@dataclass
class FitConfig:
    tau: float = 1e-4
    max_iter: int = 100
    nu: float | str = "cv"  # concrete value or "cv"
    seed: int = 0
    nu_grid: np.ndarray = field(default_factory=lambda: DEFAULT_NU_GRID.copy())
    #: starting vectors per component: the imputation start plus
    #: n_starts - 1 seeded random restarts; lowest final objective wins
    n_starts: int = 3
    #: assign CV folds by a seeded random permutation per subject instead
    #: of cyclically in time order
    cv_random_folds: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")


@dataclass
class FsvdComponent:
    rho: float
    a: np.ndarray
    phi: SplineFunction
    iterations_used: int
    converged: bool
    nu: float
    objective_trace: np.ndarray

    def scores(self) -> np.ndarray:
        """Per-subject scores rho * a_i."""
        return self.rho * self.a


@dataclass
class FsvdModel:
    basis: SplineBasis
    components: list[FsvdComponent]
    nus: list[float]
    subject_ids: list[str]
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def rank(self) -> int:
        return len(self.components)

    def rhos(self) -> np.ndarray:
        return np.array([c.rho for c in self.components])

    def score_matrix(self) -> np.ndarray:
        """n x R matrix of scores rho_r * a_ir."""
        return np.column_stack([c.scores() for c in self.components])

    def phi_orthogonality_diagnostic(self) -> float:
        """max |<phi_r, phi_s>| over r != s (deflation does not orthogonalize)."""
        if self.rank < 2:
            return 0.0
        G = self.basis.gram_l2
        gs = np.column_stack([c.phi.g for c in self.components])
        M = gs.T @ G @ gs
        np.fill_diagonal(M, 0.0)
        return float(np.max(np.abs(M)))

    def to_json(self) -> str:
        obj = {
            "schema": MODEL_SCHEMA,
            "knots": list(self.basis.knots),
            "subject_ids": list(self.subject_ids),
            "components": [
                {"rho": c.rho, "a": list(c.a), "g": list(c.phi.g)}
                for c in self.components
            ],
            "nus": list(self.nus),
            "config": {
                "tau": self.config.tau,
                "H": self.config.max_iter,
                "seed": self.config.seed,
            },
        }
        return _dumps17(obj)

    @classmethod
    def from_json(cls, text: str) -> "FsvdModel":
        obj = json.loads(text)
        schema = obj.get("schema", "")
        if not schema.startswith("fsvd-model/"):
            raise SchemaError(f"not a model file: schema={schema!r}")
        if schema.split("/")[1].split(".")[0] != "1":
            raise SchemaError(f"unsupported schema major: {schema!r}")
        basis = build_basis(np.array(obj["knots"], dtype=float))
        cfg = FitConfig(
            tau=obj["config"]["tau"],
            max_iter=obj["config"]["H"],
            seed=obj["config"]["seed"],
        )
        comps = []
        for c in obj["components"]:
            comps.append(
                FsvdComponent(
                    rho=float(c["rho"]),
                    a=np.array(c["a"], dtype=float),
                    phi=SplineFunction(basis, np.array(c["g"], dtype=float)),
                    iterations_used=0,
                    converged=True,
                    nu=math.nan,
                    objective_trace=np.array([]),
                )
            )
        return cls(
            basis=basis,
            components=comps,
            nus=[float(x) for x in obj["nus"]],
            subject_ids=list(obj["subject_ids"]),
            config=cfg,
        )


def _fmt17(x: float) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if x != x:
        return "NaN"
    return f"{x:.17g}"


def _dumps17(obj) -> str:
    """JSON text with every float printed to 17 significant digits."""
    if isinstance(obj, dict):
        items = ", ".join(f"{json.dumps(k)}: {_dumps17(v)}" for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dumps17(v) for v in obj) + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, int, float, np.floating, np.integer)):
        return _fmt17(float(obj) if isinstance(obj, (float, np.floating)) else obj)
    raise TypeError(f"cannot serialize {type(obj)}")


class FitWorkspace:
    """Precomputed design operators for one (dataset times, basis) pair.

    Reused across alternating iterations and across penalty candidates;
    only the target values change between deflation steps.
    """

    def __init__(self, ds: FunctionalDataset, basis: SplineBasis):
        self.basis = basis
        self.n = ds.n
        K = basis.n_knots
        self.counts = ds.counts().astype(float)
        self.inv_J = 1.0 / self.counts
        self.S_list = [basis.design(s.times) for s in ds.subjects]
        self.S_all = np.vstack(self.S_list)
        self.subj_idx = np.repeat(np.arange(ds.n), ds.counts())
        self.inv_J_obs = self.inv_J[self.subj_idx]
        # stacked per-subject Gram matrices, packed upper triangles
        # (symmetric, so half the memory traffic per weighting pass)
        self._triu = np.triu_indices(K)
        G = np.empty((ds.n, len(self._triu[0])))
        for i, S in enumerate(self.S_list):
            G[i] = (S.T @ S)[self._triu]
        self.G_packed = G

    def weighted_gram(self, coef: np.ndarray) -> np.ndarray:
        """Full K x K matrix sum_i coef_i * S_i' S_i."""
        K = self.basis.n_knots
        upper = coef @ self.G_packed
        A = np.empty((K, K))
        A[self._triu] = upper
        A.T[self._triu] = upper
        return A

    def target_terms(self, ds: FunctionalDataset):
        """(c, yy, y_all): c_i = S_i' y_i, yy_i = sum_j y_ij^2."""
        c = np.empty((self.n, self.basis.n_knots))
        yy = np.empty(self.n)
        for i, s in enumerate(ds.subjects):
            c[i] = self.S_list[i].T @ s.values
            yy[i] = float(s.values @ s.values)
        y_all = np.concatenate([s.values for s in ds.subjects])
        return c, yy, y_all


def objective(
    ds: FunctionalDataset, a: np.ndarray, f: SplineFunction, nu: float
) -> float:
    """sum_i (1/J_i) sum_j (Y_ij - a_i f(T_ij))^2 + nu * roughness(f)."""
    a = np.asarray(a, dtype=float)
    if a.shape != (ds.n,):
        raise DimensionMismatch(f"a has length {a.size}, dataset has n={ds.n}")
    total = 0.0
    for i, s in enumerate(ds.subjects):
        resid = s.values - a[i] * f(s.times)
        total += float(resid @ resid) / s.n_points
    return total + nu * f.basis.roughness_of(f.g)


def residualize(
    ds: FunctionalDataset, comps: list[FsvdComponent]
) -> FunctionalDataset:
    """Subtract fitted components pointwise; times unchanged."""
    for c in comps:
        if c.a.shape != (ds.n,):
            raise DimensionMismatch(
                f"component has {c.a.size} subjects, dataset has {ds.n}"
            )
    if not comps:
        return ds
    new_values = []
    for i, s in enumerate(ds.subjects):
        v = s.values.copy()
        for c in comps:
            v -= c.rho * c.a[i] * c.phi(s.times)
        new_values.append(v)
    return ds.with_values(new_values)


def initialize_vector(
    ds: FunctionalDataset,
    prior: list[FsvdComponent] = (),
    n_impute_iter: int = 25,
    max_bins: int = 50,
) -> np.ndarray:
    """Starting vector from rank-one imputation of a binned data matrix."""
    work = residualize(ds, list(prior))
    Q = min(max_bins, len(work.all_times()))
    sums = np.zeros((work.n, Q))
    cnts = np.zeros((work.n, Q))
    for i, s in enumerate(work.subjects):
        bins = np.minimum((s.times * Q).astype(int), Q - 1)
        np.add.at(sums[i], bins, s.values)
        np.add.at(cnts[i], bins, 1.0)
    keep = cnts.sum(axis=0) > 0
    if not np.any(keep):
        raise AllMissingColumn("no bin has any observation")
    sums, cnts = sums[:, keep], cnts[:, keep]
    observed = cnts > 0
    M = np.zeros_like(sums)
    M[observed] = sums[observed] / cnts[observed]
    if not np.any(M[observed] != 0.0) :
        raise AllZeroInput("all observed values are zero")
    col_means = M.sum(axis=0) / observed.sum(axis=0)
    M[~observed] = np.broadcast_to(col_means, M.shape)[~observed]
    for _ in range(n_impute_iter):
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        approx = s[0] * np.outer(U[:, 0], Vt[0])
        M[~observed] = approx[~observed]
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    a0 = U[:, 0]
    return fix_sign(a0) * a0


def fit_rank_one(
    ds: FunctionalDataset,
    basis: SplineBasis,
    a0: np.ndarray,
    cfg: FitConfig,
    workspace: FitWorkspace | None = None,
) -> FsvdComponent:
    """One component by alternating minimization of the penalized objective."""
    nu = cfg.nu
    if not isinstance(nu, (int, float)):
        raise ValueError("fit_rank_one needs a concrete nu; run CV first")
    nu = float(nu)
    a = np.asarray(a0, dtype=float).copy()
    if a.shape != (ds.n,):
        raise DimensionMismatch(f"a0 has length {a.size}, dataset has n={ds.n}")
    a /= np.linalg.norm(a)

    ws = workspace if workspace is not None else FitWorkspace(ds, basis)
    K = basis.n_knots
    P = basis.penalty
    gram = basis.gram_l2
    c, yy, y_all = ws.target_terms(ds)
    jitter_idx = np.diag_indices(K)

    g_prev = None
    obj_trace: list[float] = []
    converged = False
    iterations = 0
    g = np.zeros(K)
    for h in range(cfg.max_iter):
        iterations = h + 1
        # function half-step: exact penalized weighted least squares
        coef = ws.inv_J * a * a
        B = ws.weighted_gram(coef)
        # jitter scaled by the data part only, so a huge penalty cannot
        # leak a large ridge into the penalty's null space
        jitter = 1e-10 * np.trace(B) / K
        A = B + nu * P
        A[jitter_idx] += jitter
        b = (ws.inv_J * a) @ c
        try:
            cho = scipy.linalg.cho_factor(A, check_finite=False)
            g = scipy.linalg.cho_solve(cho, b, check_finite=False)
            # one round of iterative refinement: the penalized system can be
            # ill-conditioned on dense knot sets, and the monotonicity check
            # below needs the half-step to actually reach its minimum
            g += scipy.linalg.cho_solve(cho, b - A @ g, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise DegenerateScale(f"spline solve failed: {exc}") from None

        rough = basis.roughness_of(g)
        # per-subject quadratic terms of the fit
        proj = c @ g  # sum_j y_ij f(t_ij)
        f_all = ws.S_all @ g
        q = np.bincount(ws.subj_idx, weights=f_all * f_all, minlength=ws.n)
        # objective from raw residuals: the expanded quadratic form
        # yy - 2*a*proj + a^2*q cancels catastrophically on dense knot sets
        resid = y_all - a[ws.subj_idx] * f_all
        obj = float(np.sum(ws.inv_J_obs * resid * resid)) + nu * rough
        # the spline solve minimizes the objective plus the ridge-jitter term
        # jitter*||g||^2, so non-increase is only guaranteed up to that much
        slack = 1e-9 * (1.0 + abs(obj_trace[-1])) + jitter * float(g @ g) if obj_trace else 0.0
        if obj_trace and obj > obj_trace[-1] + slack:
            raise FsvdError(
                f"objective increased at iteration {h}: "
                f"{obj_trace[-1]!r} -> {obj!r}"
            )
        obj_trace.append(obj)

        # vector half-step: exact closed-form update, then normalization
        den = ws.inv_J * q + nu * rough
        if np.any(den <= 0.0):
            raise DegenerateScale("degenerate vector-update denominator")
        a_new = (ws.inv_J * proj) / den
        nrm = np.linalg.norm(a_new)
        if nrm < 1e-300:
            raise DegenerateScale("vector update collapsed to zero")
        a_new /= nrm
        sign = fix_sign(a_new)
        a = sign * a_new
        g = sign * g  # keep the (a, rho*phi) pair consistent

        if g_prev is not None:
            dg = g - g_prev
            denom = math.sqrt(max(float(g_prev @ gram @ g_prev), 0.0))
            change = math.sqrt(max(float(dg @ gram @ dg), 0.0))
            if denom > 0 and change / denom <= cfg.tau:
                converged = True
                g_prev = g
                break
        g_prev = g

    rho = math.sqrt(max(float(g @ gram @ g), 0.0))
    if rho < 1e-12:
        raise DegenerateScale("fitted function has (near) zero L2 norm")
    phi = SplineFunction(basis, g / rho)
    return FsvdComponent(
        rho=rho,
        a=a,
        phi=phi,
        iterations_used=iterations,
        converged=converged,
        nu=nu,
        objective_trace=np.array(obj_trace),
    )


def fsvd(
    ds: FunctionalDataset,
    R: int | str = "auto",
    cfg: FitConfig | None = None,
    basis: SplineBasis | None = None,
    rank_method: str = "ratio",
    subject_ids: list[str] | None = None,
) -> FsvdModel:
    """Sequential deflation fit; R may be a count or "auto"."""
    from . import selection  # local import: selection drives fit_rank_one

    cfg = cfg if cfg is not None else FitConfig()
    if basis is None:
        basis = build_basis(default_knots(ds.all_times()))
    auto = R == "auto"
    R_max = min(ds.n, 10) if auto else int(R)
    if R_max < 1:
        raise ValueError("R must be >= 1")

    ws = FitWorkspace(ds, basis)
    cv_plan = (
        selection.CvPlan(ds, basis, cfg.seed, cfg.cv_random_folds)
        if cfg.nu == "cv"
        else None
    )
    comps: list[FsvdComponent] = []
    nus: list[float] = []
    current = ds
    for _ in range(R_max):
        try:
            a0 = initialize_vector(current)
        except (AllZeroInput, AllMissingColumn):
            if auto:
                break
            raise
        if cfg.nu == "cv":
            nu_r = selection.cv_select_nu(
                current, a0, cfg.nu_grid, cfg, basis=basis, plan=cv_plan
            ).best_nu
        else:
            nu_r = float(cfg.nu)
        # the alternation is a local method: try the imputation start plus
        # seeded random restarts and keep the lowest-objective fit
        starts = [a0]
        rng = np.random.default_rng(cfg.seed + 7919 * (len(comps) + 1))
        for _ in range(cfg.n_starts - 1):
            v = rng.normal(size=current.n)
            starts.append(v / np.linalg.norm(v))
        comp = None
        failure: DegenerateScale | None = None
        for a_start in starts:
            try:
                cand = fit_rank_one(
                    current, basis, a_start, replace(cfg, nu=nu_r), workspace=ws
                )
            except DegenerateScale as exc:
                failure = exc
                continue
            cand_obj = float(cand.objective_trace[-1])
            if comp is None or cand_obj < best_obj - 1e-9 * (1.0 + abs(best_obj)):
                comp, best_obj = cand, cand_obj
        if comp is None:
            if auto:
                break
            raise failure
        comps.append(comp)
        nus.append(nu_r)
        current = residualize(current, [comp])

    if auto and len(comps) >= 2:
        rhos = np.array([c.rho for c in comps])
        if rank_method == "ratio":
            R_sel = selection.select_rank_ratio(rhos, R_max)
        elif rank_method == "aic":
            interim = FsvdModel(basis, comps, nus, subject_ids or ds.subject_ids, cfg)
            R_sel = selection.select_rank_aic(ds, interim, len(comps))
        else:
            raise ValueError(f"unknown rank_method: {rank_method!r}")
        comps, nus = comps[:R_sel], nus[:R_sel]

    rhos = [c.rho for c in comps]
    if any(r2 > r1 for r1, r2 in zip(rhos, rhos[1:])):
        warnings.warn("deflation produced a singular-value inversion", stacklevel=2)
    return FsvdModel(
        basis=basis,
        components=comps,
        nus=nus,
        subject_ids=subject_ids or ds.subject_ids,
        config=cfg,
    )
