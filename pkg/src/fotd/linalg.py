"""Weighted dense linear algebra for grid-discretized function matrices.

All inner products carry optional quadrature weights so that the discrete
Gram matrices stay consistent with the continuous L2 inner product: unit
weights for ODE systems, dx for periodic 1D grids, cell areas for 2D grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Orthonormality tolerance enforced on Basis after reorthonormalization.
TAU_ORTH = 1e-10

# Default relative eigenvalue floor for regularized inverses.
EPS_REG = 1e-12


class RankDeficientError(ValueError):
    """Raised when a matrix scheduled for orthonormalization has a
    numerically dependent column."""

    def __init__(self, column: int, diag: float):
        self.column = column
        self.diag = diag
        super().__init__(
            f"column {column} is numerically dependent "
            f"(triangular diagonal {diag:.3e})"
        )


class DegenerateCorrelationError(ValueError):
    """Raised when a correlation matrix has no positive eigenvalue."""


def _check_weights(weights, n):
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights shape {w.shape} incompatible with {n} rows")
    if np.any(w <= 0.0):
        raise ValueError("weights must be strictly positive")
    return w


def weighted_inner(u, w, weights=None):
    """Weighted Gram product ``<U, W>[i, j] = sum_k weights_k U_ki W_kj``.

    ``weights=None`` means unit weights. Shapes must agree on the row
    (grid) dimension; 1D inputs are treated as single columns.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float).T).T
    w = np.atleast_2d(np.asarray(w, dtype=float).T).T
    if u.shape[0] != w.shape[0]:
        raise ValueError(
            f"row counts differ: {u.shape[0]} vs {w.shape[0]}"
        )
    if weights is None:
        return u.T @ w
    wq = _check_weights(weights, u.shape[0])
    return u.T @ (wq[:, None] * w)


def weighted_frobenius(a, weights=None):
    """Frobenius norm induced by the weighted inner product."""
    a = np.asarray(a, dtype=float)
    if weights is None:
        return float(np.linalg.norm(a))
    wq = _check_weights(weights, a.shape[0])
    if a.ndim == 1:
        return float(np.sqrt(np.sum(wq * a * a)))
    return float(np.sqrt(np.sum(wq[:, None] * a * a)))


def project_complement(u, w, weights=None):
    """Project the columns of ``w`` onto the orthogonal complement of
    span(u): returns ``w - u <u, w>``.

    ``u`` may be a Basis (weights taken from it) or a plain matrix with
    orthonormal columns in the weighted inner product.
    """
    if isinstance(u, Basis):
        weights = u.weights if weights is None else weights
        u = u.columns
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    return w - u @ weighted_inner(u, w, weights)


def _fix_column_signs(q):
    """Flip column signs so the first non-negligible entry is positive.

    Returns the sign vector applied; entries of an all-zero column are
    left untouched (sign +1).
    """
    signs = np.ones(q.shape[1])
    for j in range(q.shape[1]):
        col = q[:, j]
        big = np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300)
        idx = np.argmax(big)
        if big[idx] and col[idx] < 0.0:
            signs[j] = -1.0
    q *= signs
    return signs


def weighted_qr(u, weights=None):
    """QR factorization in the weighted inner product.

    Returns ``(q, tri)`` with ``u = q @ tri``, ``<q, q> = I`` and the sign
    convention applied to the columns of ``q``. Raises RankDeficientError
    when a triangular diagonal falls at or below 1e-13 relative to the
    largest one.
    """
    u = np.asarray(u, dtype=float)
    if weights is None:
        q, tri = np.linalg.qr(u)
    else:
        wq = _check_weights(weights, u.shape[0])
        sq = np.sqrt(wq)
        q, tri = np.linalg.qr(sq[:, None] * u)
        q = q / sq[:, None]
    diag = np.abs(np.diag(tri))
    floor = 1e-13 * max(diag.max(initial=0.0), 1.0)
    bad = np.nonzero(diag <= floor)[0]
    if bad.size:
        raise RankDeficientError(int(bad[0]), float(diag[bad[0]]))
    signs = _fix_column_signs(q)
    tri = signs[:, None] * tri
    return q, tri


@dataclass
class Basis:
    """Column-orthonormal time-dependent modes on a fixed grid."""

    columns: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.columns = np.asarray(self.columns, dtype=float)
        if self.columns.ndim != 2:
            raise ValueError("basis columns must form an n x r matrix")
        if self.weights is not None:
            self.weights = _check_weights(self.weights, self.columns.shape[0])

    @property
    def rank(self):
        return self.columns.shape[1]

    @property
    def n(self):
        return self.columns.shape[0]

    def gram_defect(self):
        g = weighted_inner(self.columns, self.columns, self.weights)
        return float(np.abs(g - np.eye(self.rank)).max())

    def check(self, tol=TAU_ORTH):
        defect = self.gram_defect()
        if defect > tol:
            raise ValueError(f"basis orthonormality defect {defect:.3e} > {tol:.1e}")
        return self


def reorthonormalize(u, weights=None):
    """Re-orthonormalize ``u`` preserving its column space.

    Output Gram matrix deviates from identity by less than TAU_ORTH; the
    first non-negligible entry of each column is positive.
    """
    q, _ = weighted_qr(u, weights)
    return Basis(q, weights).check()


def regularized_inverse(c, eps_reg=EPS_REG):
    """Inverse of a symmetric PSD matrix with an eigenvalue floor.

    Eigenvalues below ``eps_reg * lambda_max`` are replaced by that floor
    before inversion, so an ill-conditioned correlation matrix yields a
    bounded (regularized) inverse instead of noise amplification.
    """
    c = np.asarray(c, dtype=float)
    lam, vec = np.linalg.eigh(0.5 * (c + c.T))
    lam_max = lam.max(initial=0.0)
    if lam_max <= 0.0:
        raise DegenerateCorrelationError(
            "degenerate correlation: no positive eigenvalue"
        )
    lam = np.maximum(lam, eps_reg * lam_max)
    return (vec / lam) @ vec.T


def symmetric_eig(c):
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Returns ``(rot, lam)`` with ``c @ rot = rot @ diag(lam)`` and the sign
    convention applied to the eigenvector columns.
    """
    c = np.asarray(c, dtype=float)
    if np.abs(c - c.T).max(initial=0.0) > 1e-12 * max(np.abs(c).max(initial=0.0), 1.0):
        raise ValueError("matrix is not symmetric")
    lam, rot = np.linalg.eigh(0.5 * (c + c.T))
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    rot = rot[:, order]
    _fix_column_signs(rot)
    return rot, lam


def truncated_svd(a, r, weights=None):
    """Best rank-r approximation factors of ``a`` in the weighted norm.

    Returns ``(u, sigma, z)`` with ``a ~ u @ diag(sigma) @ z.T``, ``u``
    weighted-orthonormal (n x r), ``z`` orthonormal (d x r) and singular
    values descending. Left singular vectors carry the sign convention,
    with the right vectors flipped accordingly.
    """
    a = np.asarray(a, dtype=float)
    n, d = a.shape
    if not 1 <= r <= min(n, d):
        raise ValueError(f"rank {r} outside 1..min{(n, d)}")
    if weights is None:
        b = a
    else:
        wq = _check_weights(weights, n)
        b = np.sqrt(wq)[:, None] * a
    try:
        u, s, zt = np.linalg.svd(b, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError(f"SVD did not converge: {exc}") from exc
    u = u[:, :r]
    s = s[:r]
    z = zt[:r].T
    if weights is not None:
        u = u / np.sqrt(weights)[:, None]
    signs = _fix_column_signs(u)
    z = z * signs
    return u, s, z
