import numpy as np
import pytest

from conftest import SyntheticDenseModel

from fotd.engine import FotdState, coeffs_rhs, modes_rhs
from fotd.linalg import Basis, reorthonormalize
from fotd.tensor import (
    FlattenMap,
    SpeciesLinearOp,
    coeff_heatmap,
    flatten_index,
    tensor_coeffs_rhs,
    tensor_modes_rhs,
    tensor_rhs,
    unflatten_index,
)


class TestFlattenMap:
    def test_examples(self):
        assert flatten_index(1, 1, 34) == 1
        assert flatten_index(2, 1, 34) == 35
        assert flatten_index(23, 34, 34) == 782

    def test_roundtrip_exhaustive(self):
        fmap = FlattenMap(23, 34)
        seen = set()
        for i in range(1, 24):
            for j in range(1, 35):
                m = fmap.flatten(i, j)
                assert 1 <= m <= fmap.d
                assert fmap.unflatten(m) == (i, j)
                seen.add(m)
        assert len(seen) == 782

    def test_out_of_range(self):
        fmap = FlattenMap(3, 4)
        with pytest.raises(IndexError):
            fmap.flatten(4, 1)
        with pytest.raises(IndexError):
            fmap.flatten(1, 5)
        with pytest.raises(IndexError):
            fmap.unflatten(13)
        with pytest.raises(IndexError):
            unflatten_index(0, 4)


def small_instance(rng, n=8, n_s=2, n_r=3, r=2, n_forced=4):
    """Abstract small flattened system with dense spatial operators."""
    fmap = FlattenMap(n_s, n_r)
    d = fmap.d
    weights = rng.uniform(0.5, 1.5, size=n)
    a_mat = rng.standard_normal((n, n))
    d_mat = rng.standard_normal((n, n))
    kappa_s = rng.uniform(0.5, 2.0, size=n_s)
    kappa = np.repeat(kappa_s, n_r)
    jac = rng.standard_normal((n, n_s, n_s))
    triples = [(i, k, jac[:, i, k].copy())
               for i in range(n_s) for k in range(n_s)]
    cols = sorted(rng.choice(d, size=min(n_forced, d), replace=False))
    forcing_cols = [(int(m), rng.standard_normal(n)) for m in cols]
    op = SpeciesLinearOp(
        fmap=fmap, kappa=kappa,
        advect=lambda f: a_mat @ f,
        laplacian=lambda f: d_mat @ f,
        jacobian_triples=triples, forcing_cols=forcing_cols,
        weights=weights,
    )
    u = reorthonormalize(rng.standard_normal((n, r)), weights).columns
    y = rng.standard_normal((d, r)) + 2.0 * np.eye(d, r)
    return op, a_mat, d_mat, jac, u, y


def dense_pieces(op, n):
    """Materialize the flattened operators for the literal transcription."""
    fmap = op.fmap
    d = fmap.d
    n_r = fmap.n_params
    ls = np.zeros((n, d, d))
    jd = op.jacobian_dense(n)
    for m in range(d):
        i, j = fmap.unflatten(m + 1)
        for nn in range(d):
            ip, jp = fmap.unflatten(nn + 1)
            if jp == j:
                ls[:, m, nn] = jd[:, i - 1, ip - 1]
    sprime = np.zeros((n, d))
    for m, f in op.forcing_cols:
        sprime[:, m] = f
    return ls, sprime


def transcribe_tensor_modes(u, y, op, a_mat, d_mat):
    """Literal loop transcription of the flattened mode evolution."""
    n, r = u.shape
    d = op.fmap.d
    wq = op.weights
    ls, sprime = dense_pieces(op, n)

    def inner(fa, fb):
        return float(np.sum(wq * fa * fb))

    def complement(f):
        acc = f.copy()
        for j in range(r):
            acc -= inner(u[:, j], f) * u[:, j]
        return acc

    c = y.T @ y
    c_inv = np.linalg.inv(c)
    out = np.zeros_like(u)
    for i in range(r):
        acc = -complement(a_mat @ u[:, i])
        for k in range(r):
            for l in range(r):
                for m in range(d):
                    acc += complement(d_mat @ u[:, k]) \
                        * (y[m, k] * op.kappa[m]) * y[m, l] * c_inv[i, l]
        for k in range(r):
            for l in range(r):
                for m in range(d):
                    for nn in range(d):
                        acc += complement(ls[:, m, nn] * u[:, k]) \
                            * y[nn, k] * y[m, l] * c_inv[i, l]
        for l in range(r):
            for m in range(d):
                acc += complement(sprime[:, m]) * y[m, l] * c_inv[i, l]
        out[:, i] = acc
    return out


def transcribe_tensor_coeffs(u, y, op, a_mat, d_mat):
    """Literal loop transcription of the flattened coefficient evolution."""
    n, r = u.shape
    d = op.fmap.d
    wq = op.weights
    ls, sprime = dense_pieces(op, n)

    def inner(fa, fb):
        return float(np.sum(wq * fa * fb))

    out = np.zeros_like(y)
    for m in range(d):
        for j in range(r):
            acc = 0.0
            for i in range(r):
                acc -= inner(u[:, j], a_mat @ u[:, i]) * y[m, i]
            for i in range(r):
                acc += inner(u[:, j], d_mat @ u[:, i]) * y[m, i] * op.kappa[m]
            for i in range(r):
                for nn in range(d):
                    acc += inner(u[:, j], ls[:, m, nn] * u[:, i]) * y[nn, i]
            acc += inner(u[:, j], sprime[:, m])
            out[m, j] = acc
    return out


class TestDenseTranscription:
    @pytest.mark.parametrize("n,n_s,n_r,r", [
        (8, 2, 3, 2), (6, 3, 2, 3), (7, 2, 2, 1),
    ])
    def test_matches_literal_equations(self, rng, n, n_s, n_r, r):
        op, a_mat, d_mat, _jac, u, y = small_instance(rng, n, n_s, n_r, r)
        du, dy = tensor_rhs(u, y, op)
        exp_u = transcribe_tensor_modes(u, y, op, a_mat, d_mat)
        exp_y = transcribe_tensor_coeffs(u, y, op, a_mat, d_mat)
        assert np.abs(du - exp_u).max() < 1e-12 * max(np.abs(exp_u).max(), 1)
        assert np.abs(dy - exp_y).max() < 1e-12 * max(np.abs(exp_y).max(), 1)

    def test_zero_everything(self, rng):
        op, *_ , u, y = small_instance(rng)
        fmap = op.fmap
        zero_op = SpeciesLinearOp(
            fmap=fmap, kappa=np.zeros(fmap.d),
            advect=lambda f: np.zeros_like(f),
            laplacian=lambda f: np.zeros_like(f),
            jacobian_triples=[], forcing_cols=[], weights=op.weights,
        )
        du, dy = tensor_rhs(u, y, zero_op)
        assert np.abs(du).max() == 0.0
        assert np.abs(dy).max() == 0.0

    def test_modes_output_orthogonal(self, rng):
        op, *_rest, u, y = small_instance(rng, n=10, n_s=2, n_r=3, r=3)
        du, _dy = tensor_rhs(u, y, op)
        assert np.abs(u.T @ (op.weights[:, None] * du)).max() < 1e-9


class TestDegeneracies:
    def test_uniform_kappa_no_reaction_matches_generic(self, rng):
        n, n_s, n_r, r = 8, 2, 3, 2
        fmap = FlattenMap(n_s, n_r)
        weights = rng.uniform(0.5, 1.5, size=n)
        a_mat = rng.standard_normal((n, n))
        d_mat = rng.standard_normal((n, n))
        kappa0 = 0.7
        op = SpeciesLinearOp(
            fmap=fmap, kappa=np.full(fmap.d, kappa0),
            advect=lambda f: a_mat @ f,
            laplacian=lambda f: d_mat @ f,
            jacobian_triples=[], forcing_cols=[], weights=weights,
        )
        u = reorthonormalize(rng.standard_normal((n, r)), weights).columns
        y = rng.standard_normal((fmap.d, r)) + 2.0 * np.eye(fmap.d, r)
        du, dy = tensor_rhs(u, y, op)

        generic = SyntheticDenseModel(-a_mat + kappa0 * d_mat,
                                      np.zeros((n, fmap.d)), weights)
        state = FotdState(t=0.0, basis=Basis(u, weights), coeffs=y,
                          model_state=generic.initial_state())
        scale = max(np.abs(du).max(), 1.0)
        assert np.abs(du - modes_rhs(state, generic)).max() < 1e-12 * scale
        assert np.abs(dy - coeffs_rhs(state, generic)).max() < 1e-12 * scale

    def test_single_species_matches_generic(self, rng):
        n, n_r, r = 9, 4, 2
        fmap = FlattenMap(1, n_r)
        weights = rng.uniform(0.5, 1.5, size=n)
        a_mat = rng.standard_normal((n, n))
        d_mat = rng.standard_normal((n, n))
        kappa0 = 1.3
        jfield = rng.standard_normal(n)
        sprime = rng.standard_normal((n, n_r))
        op = SpeciesLinearOp(
            fmap=fmap, kappa=np.full(n_r, kappa0),
            advect=lambda f: a_mat @ f,
            laplacian=lambda f: d_mat @ f,
            jacobian_triples=[(0, 0, jfield)],
            forcing_cols=[(m, sprime[:, m].copy()) for m in range(n_r)],
            weights=weights,
        )
        u = reorthonormalize(rng.standard_normal((n, r)), weights).columns
        y = rng.standard_normal((n_r, r)) + 2.0 * np.eye(n_r, r)
        du, dy = tensor_rhs(u, y, op)

        lin = -a_mat + kappa0 * d_mat + np.diag(jfield)
        generic = SyntheticDenseModel(lin, sprime, weights)
        state = FotdState(t=0.0, basis=Basis(u, weights), coeffs=y,
                          model_state=generic.initial_state())
        scale = max(np.abs(du).max(), 1.0)
        assert np.abs(du - modes_rhs(state, generic)).max() < 1e-12 * scale
        assert np.abs(dy - coeffs_rhs(state, generic)).max() < 1e-12 * scale

    def test_state_wrappers(self, rng):
        op, *_rest, u, y = small_instance(rng)
        state = FotdState(t=0.0, basis=Basis(u, op.weights), coeffs=y,
                          model_state=np.zeros(u.shape[0]))
        du, dy = tensor_rhs(u, y, op)
        assert np.array_equal(tensor_modes_rhs(state, op), du)
        assert np.array_equal(tensor_coeffs_rhs(state, op), dy)


class TestFlattenedDynamicsEquivalence:
    def test_flat_vs_tensor_form(self, rng):
        """Advancing the flattened d-column system equals advancing the
        (species x parameter) tensor form column block by column block."""
        n, n_s, n_r = 6, 3, 2
        fmap = FlattenMap(n_s, n_r)
        d = fmap.d
        a_mat = rng.standard_normal((n, n))
        d_mat = rng.standard_normal((n, n))
        kappa_s = rng.uniform(0.5, 2.0, size=n_s)
        jac = rng.standard_normal((n, n_s, n_s))
        sprime_t = rng.standard_normal((n, n_s, n_r))
        v0 = rng.standard_normal((n, d))
        dt = 1e-3

        def flat_rhs(vp):
            out = np.zeros_like(vp)
            for m in range(d):
                i, j = fmap.unflatten(m + 1)
                out[:, m] = -a_mat @ vp[:, m] \
                    + kappa_s[i - 1] * (d_mat @ vp[:, m]) \
                    + sprime_t[:, i - 1, j - 1]
                for ip in range(n_s):
                    nn = fmap.flatten(ip + 1, j) - 1
                    out[:, m] += jac[:, i - 1, ip] * vp[:, nn]
            return out

        def tensor_form_rhs(vt):
            # vt has shape (n, n_s, n_r); block system per parameter
            out = np.zeros_like(vt)
            for j in range(n_r):
                for i in range(n_s):
                    out[:, i, j] = -a_mat @ vt[:, i, j] \
                        + kappa_s[i] * (d_mat @ vt[:, i, j]) \
                        + sprime_t[:, i, j]
                    for k in range(n_s):
                        out[:, i, j] += jac[:, i, k] * vt[:, k, j]
            return out

        def rk4(f, x):
            k1 = f(x)
            k2 = f(x + 0.5 * dt * k1)
            k3 = f(x + 0.5 * dt * k2)
            k4 = f(x + dt * k3)
            return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

        flat = v0.copy()
        tens = v0.reshape(n, n_s, n_r).copy()
        for _ in range(5):
            flat = rk4(flat_rhs, flat)
            tens = rk4(tensor_form_rhs, tens)
        assert np.abs(flat - tens.reshape(n, d)).max() < 1e-10


class TestCoeffHeatmap:
    def _ranked(self, coeffs):
        from fotd.engine import RankedDecomposition
        r = coeffs.shape[1]
        return RankedDecomposition(
            modes_ranked=np.zeros((3, r)), coeffs_ranked=coeffs,
            singulars=np.ones(r), energy_fractions=np.ones(r) / r,
            reliable=np.ones(r, dtype=bool),
        )

    def test_single_entry(self):
        fmap = FlattenMap(23, 34)
        col = np.zeros(fmap.d)
        col[35 - 1] = 1.0  # flattened index 35 is species 2, parameter 1
        heat = coeff_heatmap(self._ranked(col[:, None]), 0, fmap)
        assert heat.shape == (23, 34)
        assert heat[1, 0] == 1.0
        assert np.count_nonzero(heat) == 1

    def test_all_ones(self):
        fmap = FlattenMap(4, 5)
        heat = coeff_heatmap(self._ranked(np.ones((20, 2))), 1, fmap)
        assert np.all(heat == 1.0)

    def test_mode_index_range(self):
        fmap = FlattenMap(2, 2)
        with pytest.raises(IndexError):
            coeff_heatmap(self._ranked(np.ones((4, 1))), 1, fmap)
