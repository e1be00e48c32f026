"""Coupled evolution of a low-rank sensitivity decomposition.

The full n x d sensitivity matrix is approximated as U @ Y.T with a
weighted-orthonormal basis U (n x r) and coefficients Y (d x r). Both
factors evolve by closed-form equations driven by the model's linearized
operator and parametric forcing, under the dynamically-orthogonal gauge
(mode velocities orthogonal to the current subspace).

Time convention: every model callable receives the *left endpoint* of the
current step, so step-aligned forcing windows (impulse parameters) stay
frozen across integrator stages. Stage dependence enters through the
state values only; all shipped models are autonomous apart from such
forcing windows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .integrators import cached_etdrk4_tables, etdrk4_step_blocks, rk4_step
from .linalg import (
    EPS_REG,
    Basis,
    regularized_inverse,
    symmetric_eig,
    truncated_svd,
    weighted_frobenius,
    weighted_inner,
    weighted_qr,
)

# Relative singular-value threshold for detecting numerical rank at
# initialization (rank-deficient early ensembles get padded columns).
RANK_TOL = 1e-12


@runtime_checkable
class Model(Protocol):
    """Problem interface consumed by the reduction and the oracle.

    ``weights`` is the quadrature weight vector of the spatial grid (or
    None for unit weights). ``t`` arguments follow the left-endpoint
    convention described in the module docstring.
    """

    weights: np.ndarray | None

    def dims(self) -> tuple[int, int]: ...

    def parameters(self) -> np.ndarray: ...

    def with_parameters(self, alpha) -> "Model": ...

    def initial_state(self) -> np.ndarray: ...

    def nonlinear_rhs(self, v, t) -> np.ndarray: ...

    def linearized_apply(self, v, w_mat, t) -> np.ndarray: ...

    def forcing_apply(self, v, t, y) -> np.ndarray: ...

    def forcing_project(self, v, t, u) -> np.ndarray: ...

    def forcing_dense(self, v, t) -> np.ndarray: ...


class SpectralModel(Model, Protocol):
    """Model with a diagonal stiff part in a spectral space (ETDRK4)."""

    def linear_symbol(self) -> np.ndarray: ...

    def to_spectral(self, field) -> np.ndarray: ...

    def to_physical(self, spec) -> np.ndarray: ...

    def nonstiff_nonlinear_rhs(self, v, t) -> np.ndarray: ...

    def nonstiff_linearized_apply(self, v, w_mat, t) -> np.ndarray: ...


class ZeroEnsembleError(RuntimeError):
    """Initialization attempted from an identically zero sensitivity
    ensemble."""


class NumericalBlowupError(RuntimeError):
    """A state component left the finite range during stepping."""

    def __init__(self, component: str, t: float):
        self.component = component
        self.t = t
        super().__init__(f"non-finite values in '{component}' at t={t:.6g}")


@dataclass
class FotdState:
    """Time, orthonormal modes, coefficients and the co-evolved nonlinear
    solution."""

    t: float
    basis: Basis
    coeffs: np.ndarray
    model_state: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != self.basis.rank:
            raise ValueError(
                f"coefficients {self.coeffs.shape} incompatible with basis "
                f"rank {self.basis.rank}"
            )

    @property
    def rank(self):
        return self.basis.rank

    def correlation(self):
        return self.coeffs.T @ self.coeffs


@dataclass
class RankedDecomposition:
    """Energy-ranked bi-orthonormal form {Y_hat, Sigma, U_hat}.

    ``reliable[i]`` is False when the i-th singular value sits below
    10 * eps_reg * sigma_1; that coefficient column is zeroed instead of
    normalized by a near-zero singular value.
    """

    modes_ranked: np.ndarray
    coeffs_ranked: np.ndarray
    singulars: np.ndarray
    energy_fractions: np.ndarray
    reliable: np.ndarray


def _sensitivity_apply(model):
    """Action of the sensitivity operator on an n x d matrix in flattened
    parameter order; models with column-dependent operators override it."""
    return getattr(model, "sensitivity_apply", None) or model.linearized_apply


def full_system_step(model, v, sens, t, dt, integrator="rk4"):
    """One step of the coupled (nonlinear state, full sensitivity) system."""
    apply_full = _sensitivity_apply(model)
    if integrator == "rk4":

        def rhs(_ts, blocks):
            vb, sb = blocks
            return (
                model.nonlinear_rhs(vb, t),
                apply_full(vb, sb, t) + model.forcing_dense(vb, t),
            )

        return rk4_step(rhs, (v, sens), t, dt)

    if integrator == "etdrk4":
        tables = cached_etdrk4_tables(model.linear_symbol(), dt)

        def nonlinear(_ts, blocks):
            vh, sh = blocks
            vb = model.to_physical(vh)
            sb = model.to_physical(sh)
            return (
                model.to_spectral(model.nonstiff_nonlinear_rhs(vb, t)),
                model.to_spectral(
                    model.nonstiff_linearized_apply(vb, sb, t)
                    + model.forcing_dense(vb, t)
                ),
            )

        vh, sh = etdrk4_step_blocks(
            (tables, tables), nonlinear,
            (model.to_spectral(v), model.to_spectral(sens)), t,
        )
        return model.to_physical(vh), model.to_physical(sh)

    raise ValueError(f"unknown integrator '{integrator}'")


def _padding_complement(model, v, t, u_existing, count, seed):
    """Deterministic orthonormal complement for rank-deficient starts.

    A freshly padded mode carries a zero coefficient, so any forcing
    component outside the current span would have to be absorbed by an
    arbitrarily fast basis rotation (the C^{-1} amplification). The first
    padded directions are therefore taken from the unresolved part of the
    active forcing itself; the remainder comes from the model's smooth
    seeded fields (white noise as a last resort).
    """
    n = u_existing.shape[0]
    w = model.weights
    blocks = []
    have = 0
    forcing = model.forcing_dense(v, t)
    if np.any(forcing):
        resid = forcing - u_existing @ weighted_inner(u_existing, forcing, w)
        scale = weighted_frobenius(forcing, w)
        fu, fs, _fz = truncated_svd(
            resid, min(count, min(resid.shape)), weights=w)
        keep = fs > 1e-10 * scale
        if np.any(keep):
            blocks.append(fu[:, keep])
            have = int(np.count_nonzero(keep))
    if have < count:
        pad_maker = getattr(model, "padding_fields", None)
        if pad_maker is not None:
            blocks.append(pad_maker(count - have, seed))
        else:
            blocks.append(
                np.random.default_rng(seed).standard_normal((n, count - have)))
    guess = np.hstack(blocks)
    guess = guess - u_existing @ weighted_inner(u_existing, guess, w)
    pad, _ = weighted_qr(guess, w)
    return pad[:, :count]


def initialize(model, r, dt, integrator="rk4", seed=0, v0=None,
               sensitivities0=None, presolved=None, eps_reg=EPS_REG):
    """Initialize the reduction from one step of the full sensitivity system.

    The full n x d system starts from zero sensitivities (unless
    ``sensitivities0`` overrides that), advances one step of size ``dt``
    and is truncated by a weighted rank-r SVD: U takes the leading left
    singular vectors, Y the right singular vectors scaled by the singular
    values. If the ensemble's numerical rank rho falls short of r, the
    remaining columns are a seeded orthonormal complement with zero
    coefficients.

    ``presolved=(v, sens)`` skips the internal step and initializes from
    the given state at time ``dt`` (used when an oracle run already
    produced it).
    """
    n, d = model.dims()
    if not 1 <= r <= min(n, d):
        raise ValueError(f"rank {r} outside 1..min{(n, d)}")
    if presolved is not None:
        v1, s1 = presolved
    else:
        v = model.initial_state() if v0 is None else np.asarray(v0, dtype=float)
        sens = (np.zeros((n, d)) if sensitivities0 is None
                else np.asarray(sensitivities0, dtype=float))
        v1, s1 = full_system_step(model, v, sens, 0.0, dt, integrator)
    w = model.weights
    u, sig, z = truncated_svd(s1, r, weights=w)
    if sig[0] <= 0.0:
        raise ZeroEnsembleError(
            "cannot initialize from zero ensemble; delay initialization"
        )
    rho = int(np.count_nonzero(sig > RANK_TOL * sig[0]))
    y = z * sig
    if rho < r:
        u = np.hstack([
            u[:, :rho],
            _padding_complement(model, v1, dt, u[:, :rho], r - rho, seed),
        ])
        y[:, rho:] = 0.0
    basis = Basis(u, w).check()
    return FotdState(t=dt, basis=basis, coeffs=y, model_state=v1)


def modes_rhs(state, model, eps_reg=EPS_REG):
    """Right side of the mode evolution: the projection of
    L(U) + F' Y C^{-1} onto the orthogonal complement of span(U)."""
    u = state.basis.columns
    y = state.coeffs
    v = state.model_state
    t = state.t
    w = model.weights
    lu = model.linearized_apply(v, u, t)
    fy = model.forcing_apply(v, t, y)
    c_inv = regularized_inverse(y.T @ y, eps_reg)
    du = lu - u @ weighted_inner(u, lu, w)
    du += (fy - u @ weighted_inner(u, fy, w)) @ c_inv
    return du


def coeffs_rhs(state, model):
    """Right side of the coefficient evolution: Y L_r^T + <F', U>."""
    u = state.basis.columns
    y = state.coeffs
    v = state.model_state
    t = state.t
    lr = weighted_inner(u, model.linearized_apply(v, u, t), model.weights)
    return y @ lr.T + model.forcing_project(v, t, u).T


def _reorthonormalize_pair(u, y, weights):
    """QR re-gauge of (U, Y) preserving the product U @ Y.T."""
    q, tri = weighted_qr(u, weights)
    return q, y @ tri.T


def _check_components(t, v, u, y):
    for name, arr in (("model_state", v), ("modes", u), ("coefficients", y)):
        if not np.all(np.isfinite(arr)):
            raise NumericalBlowupError(name, t)


def step(state, model, dt, integrator="rk4", eps_reg=EPS_REG,
         reorthonormalize_basis=True):
    """Advance modes, coefficients and the nonlinear state by one step.

    All three blocks move through the same integrator stages so the
    linearized operator sees stage-consistent nonlinear states. The basis
    is re-orthonormalized afterwards (QR with the coefficient matrix
    compensated, which leaves U @ Y.T unchanged).
    """
    t0 = state.t
    u0 = state.basis.columns
    y0 = state.coeffs
    v0 = state.model_state
    w = model.weights
    if w is None:
        inner = lambda a, b: a.T @ b  # noqa: E731 - hot path
    else:
        wcol = w[:, None]
        inner = lambda a, b: a.T @ (wcol * b)  # noqa: E731

    if integrator == "rk4":

        def rhs(_ts, blocks):
            v, u, y = blocks
            lu = model.linearized_apply(v, u, t0)
            fy = model.forcing_apply(v, t0, y)
            g_l = inner(u, lu)
            g_f = inner(u, fy)
            c_inv = regularized_inverse(y.T @ y, eps_reg)
            du = lu - u @ g_l + (fy - u @ g_f) @ c_inv
            dy = y @ g_l.T + model.forcing_project(v, t0, u).T
            return (model.nonlinear_rhs(v, t0), du, dy)

        v1, u1, y1 = rk4_step(rhs, (v0, u0, y0), t0, dt)

    elif integrator == "etdrk4":
        lam = model.linear_symbol()
        tab_pde = cached_etdrk4_tables(lam, dt)
        tab_ode = cached_etdrk4_tables(np.zeros(1), dt)

        def nonlinear(_ts, blocks):
            vh, uh, y = blocks
            v = model.to_physical(vh)
            u = model.to_physical(uh)
            adv = model.nonstiff_linearized_apply(v, u, t0)
            lu = adv + model.to_physical(lam[:, None] * uh)
            fy = model.forcing_apply(v, t0, y)
            g_l = inner(u, lu)
            g_f = inner(u, fy)
            c_inv = regularized_inverse(y.T @ y, eps_reg)
            du = adv - u @ g_l + (fy - u @ g_f) @ c_inv
            dy = y @ g_l.T + model.forcing_project(v, t0, u).T
            return (
                model.to_spectral(model.nonstiff_nonlinear_rhs(v, t0)),
                model.to_spectral(du),
                dy,
            )

        vh1, uh1, y1 = etdrk4_step_blocks(
            (tab_pde, tab_pde, tab_ode), nonlinear,
            (model.to_spectral(v0), model.to_spectral(u0), y0), t0,
        )
        v1 = model.to_physical(vh1)
        u1 = model.to_physical(uh1)

    else:
        raise ValueError(f"unknown integrator '{integrator}'")

    _check_components(t0 + dt, v1, u1, y1)
    if reorthonormalize_basis:
        u1, y1 = _reorthonormalize_pair(u1, y1, w)
    return FotdState(t=t0 + dt, basis=Basis(u1, w), coeffs=y1, model_state=v1)


def advance(state, model, dt, n_steps, integrator="rk4", eps_reg=EPS_REG,
            k_orth=1, callback=None):
    """Run ``n_steps`` steps, re-orthonormalizing every ``k_orth`` steps."""
    for k in range(1, n_steps + 1):
        state = step(
            state, model, dt, integrator=integrator, eps_reg=eps_reg,
            reorthonormalize_basis=(k % k_orth == 0),
        )
        if callback is not None:
            callback(state)
    return state


def rank_decomposition(state, eps_reg=EPS_REG):
    """Energy-ranked bi-orthonormal form of the current decomposition.

    Eigen-decomposes C = Y.T Y, rotates the modes by the eigenvectors and
    normalizes the coefficients by the singular values sigma_i =
    sqrt(lambda_i).
    """
    y = state.coeffs
    rot, lam = symmetric_eig(y.T @ y)
    lam = np.maximum(lam, 0.0)
    sig = np.sqrt(lam)
    u_hat = state.basis.columns @ rot
    total = float(np.sum(lam))
    energy = lam / total if total > 0.0 else np.zeros_like(lam)
    reliable = (sig > 10.0 * eps_reg * sig[0]) if sig[0] > 0.0 \
        else np.zeros(sig.shape, dtype=bool)
    y_hat = np.zeros_like(y)
    for i in range(sig.size):
        if reliable[i]:
            y_hat[:, i] = (y @ rot[:, i]) / sig[i]
    return RankedDecomposition(
        modes_ranked=u_hat, coeffs_ranked=y_hat, singulars=sig,
        energy_fractions=energy, reliable=reliable,
    )


def reconstruct(state, subset=None):
    """Columns of U @ Y.T for the requested parameter indices (0-based).

    ``subset=None`` reconstructs every parameter; an empty subset yields
    an n x 0 matrix.
    """
    u = state.basis.columns
    y = state.coeffs
    if subset is None:
        return u @ y.T
    idx = np.asarray(list(subset), dtype=int)
    if idx.size == 0:
        return np.zeros((u.shape[0], 0))
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= y.shape[0]:
        raise IndexError(f"parameter index out of range 0..{y.shape[0] - 1}")
    return u @ y[idx, :].T


def linearization_checks(model, v=None, t=0.0, h=1e-6, rng=None):
    """Consistency diagnostics every model must pass.

    Returns ``(linearity_defect, fd_defect)``: the first measures
    linearity of the linearized operator in its matrix argument, the
    second compares it against central finite differences of the
    nonlinear right side along random directions (step scaled by the
    state magnitude).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    v = model.initial_state() if v is None else v
    n = model.dims()[0]
    w1 = rng.standard_normal((n, 2))
    w2 = rng.standard_normal((n, 2))
    a, b = 0.7, -1.3
    lhs = model.linearized_apply(v, a * w1 + b * w2, t)
    rhs = a * model.linearized_apply(v, w1, t) + b * model.linearized_apply(v, w2, t)
    scale_l = max(np.abs(lhs).max(), 1.0)
    linearity = float(np.abs(lhs - rhs).max() / scale_l)

    direction = rng.standard_normal(np.shape(v))
    direction /= np.abs(direction).max()
    hs = h * max(1.0, float(np.abs(np.asarray(v)).max()))
    fplus = model.nonlinear_rhs(v + hs * direction, t)
    fminus = model.nonlinear_rhs(v - hs * direction, t)
    fd = (fplus - fminus) / (2.0 * hs)
    lin = model.linearized_apply(v, direction.reshape(n, -1, order="F"), t)
    lin = lin.reshape(np.shape(v), order="F")
    denom = max(float(np.abs(fd).max()), 1e-30)
    fd_defect = float(np.abs(fd - lin).max() / denom)
    return linearity, fd_defect
