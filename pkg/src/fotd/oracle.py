"""Ground-truth machinery for validating low-rank sensitivity runs.

Provides the full d-column sensitivity integration, the instantaneous
optimal rank-r truncation, the three-way error decomposition (total,
resolved, unresolved), a projection-only baseline whose modes ignore the
forcing, and finite-difference validation of the sensitivity equations
against their definition as parameter derivatives.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .engine import full_system_step, rank_decomposition, reconstruct
from .integrators import cached_etdrk4_tables, etdrk4_step_blocks, rk4_step
from .linalg import EPS_REG, weighted_frobenius, weighted_inner, weighted_qr


class MemoryGuardError(RuntimeError):
    """Full-system solve refused because n*d exceeds the configured cap."""


@dataclass
class SensitivityEnsemble:
    """Full n x d sensitivity matrix at one instant."""

    matrix: np.ndarray
    t: float


@dataclass
class ErrorReport:
    """Error decomposition of one reduced state against the oracle.

    ``e`` is the total reconstruction error, ``e_r`` the distance to the
    instantaneous optimal rank-r truncation, ``e_u`` that truncation's
    own error (a lower bound for ``e``). Percentages are relative to the
    oracle norm; when the oracle is identically zero they are NaN and
    ``degenerate`` is set.
    """

    t: float
    e: float
    e_r: float
    e_u: float
    pct_e: float
    pct_er: float
    pct_eu: float
    singulars_full: np.ndarray
    singulars_fotd: np.ndarray
    energy_pct: float
    degenerate: bool = False


def iter_full_sensitivities(model, t_span, dt, integrator="rk4", stride=10,
                            v0=None, sensitivities0=None,
                            max_entries=4_000_000):
    """Generator over (t, v, V') snapshots of the full sensitivity system.

    Snapshots are yielded at the start time and then every ``stride``
    steps; the caller is responsible for copying matrices it wants to
    keep. Refuses to start when n*d exceeds ``max_entries`` (lower the
    grid resolution or the parameter count instead).
    """
    n, d = model.dims()
    if n * d > max_entries:
        raise MemoryGuardError(
            f"full sensitivity system holds n*d = {n * d} entries "
            f"(cap {max_entries}); reduce the desk-scale configuration"
        )
    t0, tf = t_span
    n_steps = int(round((tf - t0) / dt))
    if abs(t0 + n_steps * dt - tf) > 1e-9 * max(1.0, abs(tf)):
        raise ValueError("t_span length is not an integer number of steps")
    v = model.initial_state() if v0 is None else np.asarray(v0, dtype=float)
    sens = (np.zeros((n, d)) if sensitivities0 is None
            else np.asarray(sensitivities0, dtype=float))
    t = t0
    yield t, v, sens
    for k in range(1, n_steps + 1):
        v, sens = full_system_step(model, v, sens, t, dt, integrator)
        t = t0 + k * dt
        if k % stride == 0 or k == n_steps:
            yield t, v, sens


def solve_full_sensitivities(model, t_span, dt, integrator="rk4", stride=10,
                             v0=None, sensitivities0=None,
                             max_entries=4_000_000):
    """Full sensitivity solve returning stored SensitivityEnsemble
    snapshots (see iter_full_sensitivities for the streaming form)."""
    out = []
    for t, _v, sens in iter_full_sensitivities(
            model, t_span, dt, integrator, stride, v0, sensitivities0,
            max_entries):
        out.append(SensitivityEnsemble(matrix=sens.copy(), t=t))
    return out


def _weighted_svd(matrix, weights):
    if weights is None:
        b = matrix
    else:
        b = np.sqrt(weights)[:, None] * matrix
    u, s, zt = np.linalg.svd(b, full_matrices=False)
    if weights is not None:
        u = u / np.sqrt(weights)[:, None]
    return u, s, zt.T


def optimal_rank_r(ensemble, r, weights=None):
    """Instantaneous best rank-r truncation of the full sensitivities.

    Returns ``(u_opt, y_opt, e_u)`` where ``u_opt`` holds the r leading
    left singular vectors, ``y_opt`` the right singular vectors scaled by
    the singular values, and ``e_u = sqrt(sum_{i>r} sigma_i^2)`` is the
    minimum error any rank-r approximation can achieve.
    """
    matrix = ensemble.matrix if isinstance(ensemble, SensitivityEnsemble) \
        else np.asarray(ensemble, dtype=float)
    n, d = matrix.shape
    if not 1 <= r <= min(n, d):
        raise ValueError(f"rank {r} outside 1..min{(n, d)}")
    u, s, z = _weighted_svd(matrix, weights)
    e_u = float(np.sqrt(np.sum(s[r:] ** 2)))
    return u[:, :r], z[:, :r] * s[:r], e_u


def error_report(state, ensemble, eps_reg=EPS_REG, n_extra=5,
                 time_atol=None):
    """Three-way error decomposition of a reduced state at one snapshot."""
    if time_atol is not None and abs(state.t - ensemble.t) > time_atol:
        raise ValueError(
            f"state time {state.t} and oracle time {ensemble.t} differ by "
            f"more than {time_atol}"
        )
    w = state.basis.weights
    r = state.rank
    full = ensemble.matrix
    recon = reconstruct(state)
    u_full, s_full, z_full = _weighted_svd(full, w)
    opt = u_full[:, :r] @ (z_full[:, :r] * s_full[:r]).T

    e = weighted_frobenius(full - recon, w)
    e_r = weighted_frobenius(recon - opt, w)
    e_u = float(np.sqrt(np.sum(s_full[r:] ** 2)))
    norm = weighted_frobenius(full, w)
    degenerate = norm == 0.0
    scale = 100.0 / norm if not degenerate else np.nan
    total_energy = float(np.sum(s_full**2))
    energy_pct = (100.0 * float(np.sum(s_full[:r] ** 2)) / total_energy
                  if total_energy > 0.0 else np.nan)
    ranked = rank_decomposition(state, eps_reg)
    return ErrorReport(
        t=state.t, e=e, e_r=e_r, e_u=e_u,
        pct_e=e * scale, pct_er=e_r * scale, pct_eu=e_u * scale,
        singulars_full=s_full[: r + n_extra].copy(),
        singulars_fotd=ranked.singulars,
        energy_pct=energy_pct, degenerate=degenerate,
    )


def otd_baseline_step(u, y, v, model, t, dt, integrator="rk4",
                      reorthonormalize_basis=True):
    """Advance the projection-only baseline one step.

    The modes track the unforced linearized dynamics, dU/dt = (I - U U^T)
    L U, while the coefficients see the forcing through its projection
    onto the current subspace. The nonlinear state is co-advanced for
    stage consistency but not returned; callers keep their own copy.
    """
    if integrator != "rk4":
        raise ValueError("the baseline stepper is RK4-only")
    w = model.weights

    def rhs(_ts, blocks):
        vb, ub, yb = blocks
        lu = model.linearized_apply(vb, ub, t)
        g_l = weighted_inner(ub, lu, w)
        du = lu - ub @ g_l
        dy = yb @ g_l.T + model.forcing_project(vb, t, ub).T
        return (model.nonlinear_rhs(vb, t), du, dy)

    _v1, u1, y1 = rk4_step(rhs, (v, u, y), t, dt)
    if reorthonormalize_basis:
        q, tri = weighted_qr(u1, w)
        u1, y1 = q, y1 @ tri.T
    return u1, y1


def solve_nonlinear(model, t_span, dt, integrator="rk4", v0=None):
    """Advance only the nonlinear state over a time span."""
    t0, tf = t_span
    n_steps = int(round((tf - t0) / dt))
    v = model.initial_state() if v0 is None else np.asarray(v0, dtype=float)
    if integrator == "rk4":
        for k in range(n_steps):
            t = t0 + k * dt
            v = rk4_step(lambda _ts, vb, _t=t: model.nonlinear_rhs(vb, _t),
                         v, t, dt)
        return v
    if integrator == "etdrk4":
        tables = cached_etdrk4_tables(model.linear_symbol(), dt)
        vh = model.to_spectral(v)
        for k in range(n_steps):
            t = t0 + k * dt

            def nonlinear(_ts, blocks, _t=t):
                return (model.to_spectral(
                    model.nonstiff_nonlinear_rhs(model.to_physical(blocks[0]), _t)),)

            (vh,) = etdrk4_step_blocks((tables,), nonlinear, (vh,), t)
        return model.to_physical(vh)
    raise ValueError(f"unknown integrator '{integrator}'")


def fd_gradient_check(model, h, t_check, dt, integrator="rk4",
                      param_indices=None, reference=None):
    """Central-difference validation of the sensitivity equations.

    Re-runs the nonlinear solve with each sampled parameter perturbed by
    +/- h (h may be a scalar or a per-parameter array) and compares the
    difference quotient against the corresponding oracle sensitivity
    column at ``t_check``. For tensor-flavored models (those carrying a
    flatten map) entries of ``param_indices`` are 1-based (species,
    parameter) pairs; otherwise they are 0-based parameter indices.

    Returns the maximum relative discrepancy over the sampled columns.
    """
    alpha = np.asarray(model.parameters(), dtype=float)
    n, d = model.dims()
    w = model.weights
    fmap = getattr(model, "fmap", None)
    if param_indices is None:
        param_indices = ([(1, 1)] if fmap is not None else list(range(min(d, 3))))
    h = np.broadcast_to(np.asarray(h, dtype=float), alpha.shape)

    if reference is None:
        snaps = solve_full_sensitivities(
            model, (0.0, t_check), dt, integrator, stride=max(1, int(round(t_check / dt))))
        reference = snaps[-1]
    full = reference.matrix

    if fmap is not None:
        params = sorted({j for _i, j in param_indices})
    else:
        params = sorted(set(param_indices))

    fd_fields = {}
    for j in params:
        col = j - 1 if fmap is not None else j
        step_j = h[col]
        e_j = np.zeros_like(alpha)
        e_j[col] = step_j
        v_plus = solve_nonlinear(model.with_parameters(alpha + e_j),
                                 (0.0, t_check), dt, integrator)
        v_minus = solve_nonlinear(model.with_parameters(alpha - e_j),
                                  (0.0, t_check), dt, integrator)
        diff = v_plus - v_minus
        scale = np.abs(v_plus).max()
        if np.abs(diff).max() < 10.0 * np.finfo(float).eps * max(scale, 1.0):
            warnings.warn(
                f"finite-difference step for parameter {j} is below the "
                "roundoff floor; increase h", RuntimeWarning)
        fd_fields[j] = diff / (2.0 * step_j)

    worst = 0.0
    for entry in param_indices:
        if fmap is not None:
            i, j = entry
            col = fmap.flatten(i, j) - 1
            fd_col = fd_fields[j][:, i - 1]
        else:
            col = entry
            fd_col = fd_fields[entry]
        ref_col = full[:, col]
        denom = max(weighted_frobenius(ref_col, w), 1e-300)
        worst = max(worst, weighted_frobenius(fd_col - ref_col, w) / denom)
    return worst
