"""Explicit time steppers: classical RK4 and ETDRK4.

ETDRK4 coefficients are evaluated by averaging over a complex contour of
radius 1 around each scaled eigenvalue, which removes the cancellation of
the phi-functions near zero. Both steppers operate on a single array or a
tuple of arrays (coupled block systems).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteStateError(FloatingPointError):
    """A stage or step produced NaN/Inf values."""


def _is_tuple_state(state):
    return isinstance(state, (tuple, list))


def _lincomb(state, parts):
    """state + sum(c * k) over (c, k) pairs, blockwise for tuple states."""
    if _is_tuple_state(state):
        out = []
        for i, s in enumerate(state):
            acc = s.copy()
            for c, k in parts:
                acc += c * k[i]
            out.append(acc)
        return tuple(out)
    acc = state.copy()
    for c, k in parts:
        acc += c * k
    return acc


def _all_finite(state):
    if _is_tuple_state(state):
        return all(np.all(np.isfinite(b)) for b in state)
    return bool(np.all(np.isfinite(state)))


def _probe_finite(state):
    """Cheap non-finiteness probe: a NaN/Inf anywhere poisons the sum."""
    if _is_tuple_state(state):
        total = 0.0
        for b in state:
            total += float(np.sum(b.real) if np.iscomplexobj(b) else np.sum(b))
        return np.isfinite(total)
    return bool(np.isfinite(np.sum(state)))


def rk4_step(rhs, state, t, dt):
    """One classical four-stage Runge-Kutta step.

    ``rhs(t, state)`` must return the same structure as ``state`` (an
    ndarray or a tuple of ndarrays). Raises NonFiniteStateError if any
    stage evaluates to a non-finite value (detected through the update,
    where non-finite stages always surface).
    """
    k1 = rhs(t, state)
    k2 = rhs(t + 0.5 * dt, _lincomb(state, [(0.5 * dt, k1)]))
    k3 = rhs(t + 0.5 * dt, _lincomb(state, [(0.5 * dt, k2)]))
    k4 = rhs(t + dt, _lincomb(state, [(dt, k3)]))
    out = _lincomb(
        state,
        [(dt / 6.0, k1), (dt / 3.0, k2), (dt / 3.0, k3), (dt / 6.0, k4)],
    )
    if not _probe_finite(out):
        for name, k in (("1", k1), ("2", k2), ("3", k3), ("4", k4)):
            if not _all_finite(k):
                raise NonFiniteStateError(
                    f"non-finite RK4 stage {name} near t={t}")
        raise NonFiniteStateError(f"non-finite RK4 update near t={t}")
    return out


@dataclass
class EtdrkCoefficients:
    """Per-eigenvalue ETDRK4 update coefficients for a fixed step size.

    At linear symbol zero the f-coefficients reduce to the classical RK4
    quadrature weights dt/6 and Q to dt/2.
    """

    dt: float
    symbol: np.ndarray
    E: np.ndarray
    E2: np.ndarray
    Q: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray


def etdrk4_precompute(linear_symbol, dt, n_contour=32):
    """Tabulate ETDRK4 coefficients for a diagonal linear symbol.

    The phi-function combinations are evaluated as the mean over
    ``n_contour`` points on a unit circle centered at each ``dt*lambda``.
    Real symbols yield real coefficient tables.
    """
    lam = np.asarray(linear_symbol)
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    z0 = dt * lam.astype(complex)
    theta = np.exp(2j * np.pi * (np.arange(n_contour) + 0.5) / n_contour)
    z = z0[..., None] + theta
    ez = np.exp(z)
    z3 = z**3
    Q = dt * np.mean((np.exp(z / 2.0) - 1.0) / z, axis=-1)
    f1 = dt * np.mean((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3, axis=-1)
    f2 = dt * np.mean((2.0 + z + ez * (z - 2.0)) / z3, axis=-1)
    f3 = dt * np.mean((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3, axis=-1)
    E = np.exp(z0)
    E2 = np.exp(z0 / 2.0)
    if np.isrealobj(lam):
        E, E2, Q, f1, f2, f3 = (np.real(a) for a in (E, E2, Q, f1, f2, f3))
    return EtdrkCoefficients(dt=float(dt), symbol=lam, E=E, E2=E2, Q=Q,
                             f1=f1, f2=f2, f3=f3)


def _bc(coeff, state):
    """Broadcast a per-row coefficient table over matrix-valued states."""
    c = np.asarray(coeff)
    if c.ndim == 0 or c.shape == np.shape(state):
        return c
    if np.ndim(state) == c.ndim + 1:
        return c[..., None]
    return c


def etdrk4_step(coeffs, nonlinear, state, t, dt=None):
    """One ETDRK4 step for ``u' = symbol*u + nonlinear(t, u)``.

    ``state`` lives in the (spectral) space where the linear symbol is
    diagonal; column-stacked states (n x k) share the symbol across
    columns. ``dt``, when given, must match the precomputed tables.
    """
    if dt is not None and abs(dt - coeffs.dt) > 1e-15 * abs(coeffs.dt):
        raise ValueError(
            f"dt {dt} does not match the coefficient table dt {coeffs.dt}")
    dt = coeffs.dt
    E = _bc(coeffs.E, state)
    E2 = _bc(coeffs.E2, state)
    Q = _bc(coeffs.Q, state)
    n0 = nonlinear(t, state)
    a = E2 * state + Q * n0
    na = nonlinear(t + 0.5 * dt, a)
    b = E2 * state + Q * na
    nb = nonlinear(t + 0.5 * dt, b)
    c = E2 * a + Q * (2.0 * nb - n0)
    nc = nonlinear(t + dt, c)
    out = (E * state + _bc(coeffs.f1, state) * n0
           + 2.0 * _bc(coeffs.f2, state) * (na + nb)
           + _bc(coeffs.f3, state) * nc)
    if not _probe_finite(out):
        raise NonFiniteStateError(f"non-finite ETDRK4 step near t={t}")
    return out


def etdrk4_step_blocks(tables, nonlinear, blocks, t):
    """Coupled ETDRK4 step over a tuple of blocks with per-block tables.

    ``nonlinear(t, blocks)`` returns the tuple of non-stiff tendencies.
    All blocks advance through the same stage structure so the coupling
    stays stage-consistent.
    """
    dt = tables[0].dt
    n0 = nonlinear(t, blocks)
    a = tuple(_bc(c.E2, s) * s + _bc(c.Q, s) * k
              for c, s, k in zip(tables, blocks, n0))
    na = nonlinear(t + 0.5 * dt, a)
    b = tuple(_bc(c.E2, s) * s + _bc(c.Q, s) * k
              for c, s, k in zip(tables, blocks, na))
    nb = nonlinear(t + 0.5 * dt, b)
    c_ = tuple(_bc(c.E2, sa) * sa + _bc(c.Q, sa) * (2.0 * kb - k0)
               for c, sa, kb, k0 in zip(tables, a, nb, n0))
    nc = nonlinear(t + dt, c_)
    out = tuple(
        _bc(c.E, s) * s + _bc(c.f1, s) * k0
        + 2.0 * _bc(c.f2, s) * (ka + kb) + _bc(c.f3, s) * kc
        for c, s, k0, ka, kb, kc in zip(tables, blocks, n0, na, nb, nc)
    )
    if not _probe_finite(out):
        raise NonFiniteStateError(f"non-finite ETDRK4 step near t={t}")
    return out


_table_cache: dict = {}


def cached_etdrk4_tables(linear_symbol, dt, n_contour=32):
    """Coefficient tables memoized on (symbol bytes, dt)."""
    lam = np.asarray(linear_symbol)
    key = (lam.tobytes(), float(dt), int(n_contour))
    hit = _table_cache.get(key)
    if hit is None:
        hit = etdrk4_precompute(lam, dt, n_contour)
        _table_cache[key] = hit
    return hit
