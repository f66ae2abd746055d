"""Natural cubic splines parameterized by their values at the knots.

The roughness quadratic form uses the banded Reinsch construction
(second-difference matrix against the tridiagonal gap matrix), and the
L2 Gram matrix is assembled by per-gap Gaussian quadrature.  Evaluation
is linear in the knot values, so point evaluation at a set of times is a
sparse-structured design matrix; that is what makes the penalized
weighted least-squares solve below a single linear system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    BasisMismatch,
    DimensionMismatch,
    NonIncreasingKnots,
    SingularSystem,
    TooFewKnots,
)

#: Gauss-Legendre points per knot gap for the L2 Gram matrix; the basis is
#: one cubic per gap, so products are degree 6 and 4 points integrate exactly
_QUAD_POINTS = 4


class SplineBasis:
    """Interpolation basis on a fixed knot vector.

    Attributes:
        knots: strictly increasing, length >= 3, inside [0, 1].
        penalty: K x K roughness matrix (integral of products of second
            derivatives); PSD with rank K - 2.
        gram_l2: K x K matrix of L2 inner products of the interpolation
            basis functions; SPD.
    """

    def __init__(self, knots: np.ndarray):
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1 or len(knots) < 3:
            raise TooFewKnots(f"need at least 3 knots, got {knots.size}")
        if np.any(np.diff(knots) <= 0):
            raise NonIncreasingKnots("knots must be strictly increasing")
        if knots[0] < 0.0 or knots[-1] > 1.0:
            raise NonIncreasingKnots("knots must lie inside [0, 1]")
        self.knots = knots
        K = len(knots)
        h = np.diff(knots)

        # Reinsch matrices: delta is (K-2) x K second differences, W the
        # tridiagonal gap matrix; penalty = delta' W^{-1} delta.
        delta = np.zeros((K - 2, K))
        rows = np.arange(K - 2)
        delta[rows, rows] = 1.0 / h[:-1]
        delta[rows, rows + 1] = -1.0 / h[:-1] - 1.0 / h[1:]
        delta[rows, rows + 2] = 1.0 / h[1:]
        W = np.diag((h[:-1] + h[1:]) / 3.0)
        off = h[1:-1] / 6.0
        W[rows[:-1], rows[:-1] + 1] = off
        W[rows[:-1] + 1, rows[:-1]] = off

        # curvature map: second derivatives at interior knots = _curv @ g
        self._curv = np.linalg.solve(W, delta)
        self._delta = delta
        penalty = delta.T @ self._curv
        self.penalty = (penalty + penalty.T) / 2.0

        grid, wts = _quadrature_grid(knots)
        S = self.design(grid)
        gram = S.T @ (wts[:, None] * S)
        self.gram_l2 = (gram + gram.T) / 2.0

    @property
    def n_knots(self) -> int:
        return len(self.knots)

    def design(self, t: np.ndarray) -> np.ndarray:
        """Rows of knot-value coefficients: f(t) = design(t) @ g.

        Natural cubic interpolation inside the knot range, linear
        extrapolation (zero second derivative) outside.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = self.knots
        K = len(x)
        idx = np.clip(np.searchsorted(x, t, side="right") - 1, 0, K - 2)
        h = x[idx + 1] - x[idx]
        A = (x[idx + 1] - t) / h
        B = (t - x[idx]) / h
        C = (A**3 - A) * h**2 / 6.0
        D = (B**3 - B) * h**2 / 6.0

        S = np.zeros((len(t), K))
        r = np.arange(len(t))
        np.add.at(S, (r, idx), A)
        np.add.at(S, (r, idx + 1), B)
        # curvature contributions; gamma_0 = gamma_{K-1} = 0
        left_int = (idx >= 1)
        if np.any(left_int):
            S[left_int] += C[left_int, None] * self._curv[idx[left_int] - 1]
        right_int = (idx + 1 <= K - 2)
        if np.any(right_int):
            S[right_int] += D[right_int, None] * self._curv[idx[right_int]]

        # linear extrapolation beyond the outer knots
        lo = t < x[0]
        if np.any(lo):
            h0 = x[1] - x[0]
            slope = np.zeros(K)
            slope[0] -= 1.0 / h0
            slope[1] += 1.0 / h0
            slope -= (h0 / 6.0) * self._curv[0]
            base = np.zeros(K)
            base[0] = 1.0
            S[lo] = base + (t[lo] - x[0])[:, None] * slope
        hi = t > x[-1]
        if np.any(hi):
            hL = x[-1] - x[-2]
            slope = np.zeros(K)
            slope[-2] -= 1.0 / hL
            slope[-1] += 1.0 / hL
            slope += (hL / 6.0) * self._curv[-1]
            base = np.zeros(K)
            base[-1] = 1.0
            S[hi] = base + (t[hi] - x[-1])[:, None] * slope
        return S

    def same_as(self, other: "SplineBasis") -> bool:
        return self is other or np.array_equal(self.knots, other.knots)

    def roughness_of(self, g: np.ndarray) -> float:
        """Integrated squared second derivative of the spline with values g.

        Evaluated through the factored form (delta g)' W^{-1} (delta g),
        which avoids the cancellation of the assembled penalty matrix when
        knot gaps vary by orders of magnitude.
        """
        d = self._delta @ g
        return max(float(d @ (self._curv @ g)), 0.0)


def _quadrature_grid(knots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights, _QUAD_POINTS per knot gap."""
    x, w = np.polynomial.legendre.leggauss(_QUAD_POINTS)
    grids, weights = [], []
    for a, b in zip(knots[:-1], knots[1:]):
        half = (b - a) / 2.0
        grids.append((a + b) / 2.0 + half * x)
        weights.append(half * w)
    return np.concatenate(grids), np.concatenate(weights)


@dataclass
class SplineFunction:
    """A natural cubic spline given by its values `g` at the basis knots."""

    basis: SplineBasis
    g: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        if self.g.shape != (self.basis.n_knots,):
            raise DimensionMismatch(
                f"g has shape {self.g.shape}, basis has {self.basis.n_knots} knots"
            )

    def __call__(self, t):
        out = self.basis.design(t) @ self.g
        return float(out[0]) if np.isscalar(t) else out


def build_basis(knots: np.ndarray) -> SplineBasis:
    return SplineBasis(knots)


def evaluate(f: SplineFunction, t) -> float | np.ndarray:
    return f(t)


def l2_inner(f: SplineFunction, h: SplineFunction) -> float:
    if not f.basis.same_as(h.basis):
        raise BasisMismatch("functions live on different bases")
    return float(f.g @ f.basis.gram_l2 @ h.g)


def l2_norm(f: SplineFunction) -> float:
    return math.sqrt(max(l2_inner(f, f), 0.0))


def roughness(f: SplineFunction) -> float:
    return f.basis.roughness_of(f.g)


@dataclass
class WlsRow:
    """One subject's contribution to the penalized least-squares solve."""

    subject_weight: float
    times: np.ndarray
    targets: np.ndarray
    inv_J: float


def solve_penalized_wls(
    basis: SplineBasis, rows: list[WlsRow], nu: float
) -> SplineFunction:
    """Minimize sum_i inv_J_i * sum_j (y_ij - w_i f(t_ij))^2 + nu * roughness(f).

    Normal equations over the knot values, with a tiny ridge jitter on the
    diagonal for solvability.
    """
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    K = basis.n_knots
    D = np.zeros((K, K))
    b = np.zeros(K)
    total_weight = 0.0
    for row in rows:
        times = np.asarray(row.times, dtype=float)
        targets = np.asarray(row.targets, dtype=float)
        if times.shape != targets.shape:
            raise DimensionMismatch("times and targets differ in length")
        w = row.subject_weight
        c = row.inv_J * w * w
        total_weight += c * len(times)
        if w == 0.0:
            continue
        S = basis.design(times)
        D += c * (S.T @ S)
        b += (row.inv_J * w) * (S.T @ targets)
    if total_weight <= 0.0:
        raise SingularSystem("total effective weight is zero")
    A = D + nu * basis.penalty
    # jitter scaled by the data part only, so huge penalties do not leak
    # a large ridge into the penalty's (linear-function) null space
    A[np.diag_indices_from(A)] += 1e-10 * np.trace(D) / K
    try:
        cho = scipy.linalg.cho_factor(A, check_finite=False)
        g = scipy.linalg.cho_solve(cho, b, check_finite=False)
        # one round of iterative refinement for ill-conditioned systems
        g += scipy.linalg.cho_solve(cho, b - A @ g, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    if not np.all(np.isfinite(g)):
        raise SingularSystem("non-finite solution")
    return SplineFunction(basis, g)


def default_knots(times: np.ndarray, max_knots: int = 200) -> np.ndarray:
    """Thin a sorted union of observed times to at most `max_knots` knots.

    Keeps every ceil(U / max_knots)-th unique time; the final time is kept
    so the knot range covers the data.
    """
    u = np.unique(np.asarray(times, dtype=float))
    stride = max(1, math.ceil(len(u) / max_knots))
    kept = u[::stride]
    if kept[-1] != u[-1]:
        kept = np.append(kept, u[-1])
    return kept
