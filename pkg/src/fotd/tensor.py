"""Low-rank sensitivity evolution for multi-species transport.

When every species carries its own diffusion coefficient the linear
operator changes from one flattened sensitivity column to the next, so
the generic mode/coefficient equations no longer apply. The flattened
index m(i, j) = j + (i - 1) n_r packs (species i, parameter j) pairs into
one matrix so a single basis compresses all cross-correlations; the
evolution equations below contract the diffusion diagonal and the
per-grid-point reaction Jacobian against the coefficient matrix without
materializing any d x d operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .engine import Basis, FotdState, _check_components, _reorthonormalize_pair
from .integrators import rk4_step
from .linalg import EPS_REG, regularized_inverse, weighted_inner


def flatten_index(i, j, n_params):
    """Pack 1-based (species i, parameter j) into m = j + (i-1) n_r."""
    if j < 1 or j > n_params:
        raise IndexError(f"parameter index {j} outside 1..{n_params}")
    if i < 1:
        raise IndexError(f"species index {i} must be >= 1")
    return j + (i - 1) * n_params


def unflatten_index(m, n_params):
    """Invert flatten_index; returns 1-based (i, j)."""
    if m < 1:
        raise IndexError(f"flattened index {m} must be >= 1")
    i = (m - 1) // n_params + 1
    j = (m - 1) % n_params + 1
    return i, j


@dataclass(frozen=True)
class FlattenMap:
    """Bijection between (species, parameter) pairs and flattened columns."""

    n_species: int
    n_params: int

    @property
    def d(self):
        return self.n_species * self.n_params

    def flatten(self, i, j):
        if i > self.n_species:
            raise IndexError(f"species index {i} outside 1..{self.n_species}")
        return flatten_index(i, j, self.n_params)

    def unflatten(self, m):
        if m > self.d:
            raise IndexError(f"flattened index {m} outside 1..{self.d}")
        return unflatten_index(m, self.n_params)


@dataclass
class SpeciesLinearOp:
    """Snapshot of the flattened linear sensitivity operator.

    ``kappa`` holds the d diagonal diffusion entries (constant across all
    parameters of one species, so only the species block pattern varies).
    The reaction Jacobian is kept as sparse per-grid-point triples
    ``(i, k, field)`` meaning d(source_i)/d(conc_k) = field, 0-based; the
    Kronecker-delta structure over parameters is exploited by the
    contractions below. ``forcing_cols`` lists the nonzero flattened
    columns of the parametric forcing as ``(m, field)``, 0-based.
    """

    fmap: FlattenMap
    kappa: np.ndarray
    advect: Callable[[np.ndarray], np.ndarray]
    laplacian: Callable[[np.ndarray], np.ndarray]
    jacobian_triples: list
    forcing_cols: list
    weights: np.ndarray | None = None
    velocity: tuple | None = None

    def jacobian_dense(self, n):
        """Materialize the (n, n_s, n_s) per-grid-point Jacobian (for
        small verification instances only)."""
        ns = self.fmap.n_species
        jac = np.zeros((n, ns, ns))
        for i, k, f in self.jacobian_triples:
            jac[:, i, k] += f
        return jac


def _coeff_cube(y, fmap):
    """Reshape Y (d x r) into (r, n_s, n_r) coefficient slabs."""
    return np.ascontiguousarray(
        y.T.reshape(y.shape[1], fmap.n_species, fmap.n_params)
    )


def tensor_modes_rhs(state, op, eps_reg=EPS_REG):
    """Mode tendency of the flattened system (orthogonal to span(U))."""
    du, _ = tensor_rhs(state.basis.columns, state.coeffs, op, eps_reg)
    return du


def tensor_coeffs_rhs(state, op, eps_reg=EPS_REG):
    """Coefficient tendency of the flattened system."""
    _, dy = tensor_rhs(state.basis.columns, state.coeffs, op, eps_reg)
    return dy


def tensor_rhs(u, y, op, eps_reg=EPS_REG):
    """Raw-array form of the flattened mode/coefficient tendencies."""
    w = op.weights
    fmap = op.fmap
    yc = _coeff_cube(y, fmap)

    adv = op.advect(u)
    lap = op.laplacian(u)
    c_inv = regularized_inverse(y.T @ y, eps_reg)
    uw = u if w is None else u * w[:, None]

    ky = op.kappa[:, None] * y
    diff_r = y.T @ ky

    # Everything that enters the mode equation through C^{-1}.
    gain = lap @ diff_r
    react_y = np.zeros_like(y)
    for i, k, f in op.jacobian_triples:
        g = yc[:, k, :] @ yc[:, i, :].T
        gain += f[:, None] * (u @ g)
        m = uw.T @ (f[:, None] * u)
        react_y[i * fmap.n_params:(i + 1) * fmap.n_params, :] += \
            (m @ yc[:, k, :]).T
    force_y = np.zeros_like(y)
    for m_idx, f in op.forcing_cols:
        gain += np.outer(f, y[m_idx, :])
        force_y[m_idx, :] = uw.T @ f

    du = -adv + gain @ c_inv
    du -= u @ weighted_inner(u, du, w)

    dy = -(y @ (uw.T @ adv).T) + ky @ (uw.T @ lap).T + react_y + force_y
    return du, dy


def tensor_step(state, model, dt, eps_reg=EPS_REG,
                reorthonormalize_basis=True):
    """Advance the flattened reduction and the species state by one RK4
    step, stage-consistently."""
    t0 = state.t
    w = model.weights

    def rhs(_ts, blocks):
        v, u, y = blocks
        op = model.species_linear_op(v, t0)
        du, dy = tensor_rhs(u, y, op, eps_reg)
        return (model.nonlinear_rhs(v, t0), du, dy)

    v1, u1, y1 = rk4_step(
        rhs, (state.model_state, state.basis.columns, state.coeffs), t0, dt
    )
    _check_components(t0 + dt, v1, u1, y1)
    if reorthonormalize_basis:
        u1, y1 = _reorthonormalize_pair(u1, y1, w)
    return FotdState(t=t0 + dt, basis=Basis(u1, w), coeffs=y1, model_state=v1)


def coeff_heatmap(ranked, mode_index, fmap):
    """Reshape one ranked coefficient column into an n_s x n_r matrix.

    Row i holds the weights of species i+1 across all parameters; column
    j holds parameter j+1 across species.
    """
    y_hat = ranked.coeffs_ranked
    if not 0 <= mode_index < y_hat.shape[1]:
        raise IndexError(f"mode index {mode_index} outside 0..{y_hat.shape[1] - 1}")
    col = y_hat[:, mode_index]
    if col.shape[0] != fmap.d:
        raise ValueError("coefficient length does not match the flatten map")
    return col.reshape(fmap.n_species, fmap.n_params)
