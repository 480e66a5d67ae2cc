"""Penalized regression-spline bases with diagonalized penalties.

A cubic B-spline basis on evenly spaced knots is centred (sum-to-zero over
the grid, since the intercept is carried separately) and rotated so that
the second-difference penalty becomes the identity on the penalized
columns. Independent ``N(0, sd^2)`` priors on those columns then reproduce
the quadratic smoothing penalty; the one remaining column spans the
centred linear function and is left unpenalized.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import BSpline

NULL_SUFFIX = ":null"


@dataclass(frozen=True)
class SplineBasis:
    X: np.ndarray
    grid: np.ndarray
    penalized: np.ndarray
    # maps reparameterized coefficients to raw B-spline coefficients
    to_raw: np.ndarray | None = None
    raw_design: np.ndarray | None = None
    raw_penalty: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.X.shape[1]

    @property
    def penalized_count(self) -> int:
        return int(self.penalized.sum())

    @property
    def nullspace_count(self) -> int:
        return self.K - self.penalized_count


def bspline_design(grid: np.ndarray, n_basis: int, degree: int = 3) -> np.ndarray:
    """Dense design matrix of ``n_basis`` B-splines on evenly spaced knots."""
    grid = np.asarray(grid, dtype=float)
    lo, hi = grid.min(), grid.max()
    n_int = n_basis - degree
    h = (hi - lo) / n_int
    knots = lo + h * np.arange(-degree, n_int + degree + 1)
    return BSpline.design_matrix(grid, knots, degree).toarray()


def difference_penalty(n: int, order: int = 2) -> np.ndarray:
    D = np.diff(np.eye(n), n=order, axis=0)
    return D.T @ D


def build_basis(grid, K: int = 20) -> SplineBasis:
    """Reparameterized penalized cubic spline basis with ``K`` columns.

    Columns ``0..K-2`` are penalized (unit prior precision equals the
    second-difference penalty) and column ``K-1`` is the unit-norm centred
    linear term.
    """
    grid = np.asarray(grid, dtype=float)
    if K < 3:
        raise ValueError("K must be at least 3")
    if grid.ndim != 1 or not np.all(np.isfinite(grid)):
        raise ValueError("grid must be a finite 1-D sequence")
    n_distinct = np.unique(grid).size
    if n_distinct < K + 1:
        raise ValueError(f"degenerate grid: {n_distinct} distinct points, need at least {K + 1} for K={K}")

    n_raw = K + 1
    B = bspline_design(grid, n_raw)
    S = difference_penalty(n_raw)

    # sum-to-zero constraint over the grid, absorbed as in mgcv via QR
    c = B.sum(axis=0)[:, None]
    Q, _ = np.linalg.qr(c, mode="complete")
    Z = Q[:, 1:]
    Bc = B @ Z
    Sc = Z.T @ S @ Z
    Sc = 0.5 * (Sc + Sc.T)
    evals, U = np.linalg.eigh(Sc)
    order = np.argsort(evals)[::-1]
    evals, U = evals[order], U[:, order]
    pos = evals[: K - 1]
    if np.any(pos <= 1e-10 * evals[0]):
        raise ValueError("penalty has a larger null space than expected")

    # exact null direction: raw coefficients linear in the index, shifted onto the constraint
    a = np.arange(n_raw, dtype=float)
    a = a - (c[:, 0] @ a) / c[:, 0].sum()
    u_null = Z.T @ a
    u_null /= np.linalg.norm(u_null)
    null_col = Bc @ u_null
    norm = np.linalg.norm(null_col)
    if norm == 0:
        raise ValueError("degenerate grid: linear term vanishes")
    # fix the sign so the null column increases along the grid
    if null_col[np.argmax(grid)] < null_col[np.argmin(grid)]:
        u_null, null_col = -u_null, -null_col
    transform = np.column_stack([U[:, : K - 1] / np.sqrt(pos), u_null / norm])
    to_raw = Z @ transform
    X = B @ to_raw
    penalized = np.ones(K, dtype=bool)
    penalized[-1] = False
    return SplineBasis(X=X, grid=grid, penalized=penalized, to_raw=to_raw, raw_design=B, raw_penalty=S)


def eval_curve(basis: SplineBasis, beta0: float, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (basis.K,):
        raise ValueError(f"expected {basis.K} coefficients, got shape {beta.shape}")
    return beta0 + basis.X @ beta


def load_basis(path: str | Path, grid=None) -> SplineBasis:
    """Read a basis matrix from delimited text.

    The single header row names the columns; names ending in ``:null`` mark
    unpenalized (null-space) columns. Each following row is one grid point.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise ValueError(f"{path}: basis file needs a header and at least one row")
    header = [h.strip() for h in rows[0]]
    penalized = np.array([not h.endswith(NULL_SUFFIX) for h in header])
    try:
        X = np.array([[float(c) for c in r] for r in rows[1:]])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric basis entry ({exc})") from None
    if X.shape[1] != len(header):
        raise ValueError(f"{path}: rows do not match header width")
    if grid is None:
        grid = np.arange(1, X.shape[0] + 1, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if grid.shape[0] != X.shape[0]:
        raise ValueError(f"{path}: basis has {X.shape[0]} rows, grid has {grid.shape[0]} points")
    return SplineBasis(X=X, grid=grid, penalized=penalized)


def save_basis(basis: SplineBasis, path: str | Path) -> None:
    header = [f"b{i + 1}" + ("" if p else NULL_SUFFIX) for i, p in enumerate(basis.penalized)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in basis.X:
            w.writerow([repr(float(v)) for v in row])
