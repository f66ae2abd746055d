"""Brute-force dense-grid references used by the test suite.

On a fine regular grid the functional decomposition reduces to an ordinary
matrix SVD of the quadrature-weighted value matrix; these helpers compute
that reduction exactly and independently of the iterative estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DenseGridData:
    grid: np.ndarray  # equispaced, endpoints 0 and 1, length G >= 3
    values: np.ndarray  # n x G

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if len(g) < 3 or g[0] != 0.0 or g[-1] != 1.0:
            raise ValueError("grid must span [0, 1] with >= 3 points")


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    w = np.empty_like(g)
    w[1:-1] = (g[2:] - g[:-2]) / 2.0
    w[0] = (g[1] - g[0]) / 2.0
    w[-1] = (g[-1] - g[-2]) / 2.0
    return w


def fix_sign(a: np.ndarray) -> float:
    """Sign making sum(a) > 0, ties broken by first nonzero entry."""
    s = float(np.sum(a))
    if s != 0.0:
        return 1.0 if s > 0 else -1.0
    nz = np.nonzero(a)[0]
    if len(nz) == 0:
        return 1.0
    return 1.0 if a[nz[0]] > 0 else -1.0


def dense_svd_reference(d: DenseGridData, R: int) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """First R (rho, a, phi_grid) triples of the quadrature-weighted SVD.

    phi_grid is unit-norm in trapezoid-quadrature L2; a is unit-norm in
    Euclidean norm; the sum-positive sign convention is applied to a.
    """
    n, G = d.values.shape
    if R > min(n, G):
        raise ValueError("R exceeds min(n, G)")
    q = trapezoid_weights(d.grid)
    U, s, Vt = np.linalg.svd(d.values * np.sqrt(q)[None, :], full_matrices=False)
    out = []
    for r in range(R):
        a = U[:, r]
        phi = Vt[r] / np.sqrt(q)
        nrm = np.sqrt(np.sum(q * phi**2))
        phi = phi / nrm
        sign = fix_sign(a)
        out.append((float(s[r]), sign * a, sign * phi))
    return out


def best_rank_one_error(d: DenseGridData) -> float:
    """Residual squared L2 mass after the best single component."""
    q = trapezoid_weights(d.grid)
    s = np.linalg.svd(d.values * np.sqrt(q)[None, :], compute_uv=False)
    return float(np.sum(s[1:] ** 2))
