import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class SyntheticDenseModel:
    """Linear test model with explicit dense operator and forcing
    matrices; the nonlinear state is a decoupled decaying vector."""

    def __init__(self, lin, forcing, weights=None):
        self.lin = np.asarray(lin, dtype=float)
        self.forcing = np.asarray(forcing, dtype=float)
        self.weights = weights
        self._n = self.lin.shape[0]
        self._d = self.forcing.shape[1]

    def dims(self):
        return self._n, self._d

    def parameters(self):
        return np.zeros(self._d)

    def with_parameters(self, alpha):
        return self

    def initial_state(self):
        return np.linspace(0.5, 1.5, self._n)

    def nonlinear_rhs(self, v, t):
        return -0.1 * v

    def linearized_apply(self, v, w_mat, t):
        return self.lin @ w_mat

    def forcing_dense(self, v, t):
        return self.forcing

    def forcing_apply(self, v, t, y):
        return self.forcing @ y

    def forcing_project(self, v, t, u):
        if self.weights is None:
            return u.T @ self.forcing
        return u.T @ (self.weights[:, None] * self.forcing)


def make_synthetic(rng, n=6, d=4, weighted=False):
    lin = rng.standard_normal((n, n))
    forcing = rng.standard_normal((n, d))
    weights = rng.uniform(0.5, 1.5, size=n) if weighted else None
    return SyntheticDenseModel(lin, forcing, weights)
