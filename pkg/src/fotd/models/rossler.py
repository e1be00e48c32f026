"""Rossler system with sensitivities to its three model parameters.

    dv1/dt = -v2 - v3
    dv2/dt = v1 + a1 v2
    dv3/dt = a2 + v3 (v1 - a3)

The default parameters (0.1, 0.1, 14) put the attractor in its chaotic
regime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RosslerParams:
    a1: float = 0.1
    a2: float = 0.1
    a3: float = 14.0


class RosslerModel:
    """Three-state ODE system; unit quadrature weights."""

    weights = None

    def __init__(self, params: RosslerParams | None = None,
                 v0=(1.0, 1.0, 1.0)):
        self.params = params if params is not None else RosslerParams()
        self._v0 = np.asarray(v0, dtype=float)

    def dims(self):
        return 3, 3

    def parameters(self):
        p = self.params
        return np.array([p.a1, p.a2, p.a3])

    def with_parameters(self, alpha):
        a1, a2, a3 = (float(a) for a in alpha)
        return RosslerModel(RosslerParams(a1, a2, a3), self._v0)

    def initial_state(self):
        return self._v0.copy()

    def nonlinear_rhs(self, v, t):
        p = self.params
        return np.array([
            -v[1] - v[2],
            v[0] + p.a1 * v[1],
            p.a2 + v[2] * (v[0] - p.a3),
        ])

    def jacobian(self, v):
        p = self.params
        return np.array([
            [0.0, -1.0, -1.0],
            [1.0, p.a1, 0.0],
            [v[2], 0.0, v[0] - p.a3],
        ])

    def linearized_apply(self, v, w_mat, t):
        return self.jacobian(v) @ w_mat

    def forcing_dense(self, v, t):
        return np.array([
            [0.0, 0.0, 0.0],
            [v[1], 0.0, 0.0],
            [0.0, 1.0, -v[2]],
        ])

    def forcing_apply(self, v, t, y):
        return self.forcing_dense(v, t) @ y

    def forcing_project(self, v, t, u):
        return u.T @ self.forcing_dense(v, t)
