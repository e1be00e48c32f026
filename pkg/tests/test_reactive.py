import warnings

import numpy as np
import pytest

from fotd.models import ReactiveConfig, ReactiveModel
from fotd.models.reactive import (
    N_PARAMS,
    N_SPECIES,
    TABLE_ALPHA,
    analytic_velocity,
    ChannelGrid,
    reaction_forcing_triples,
    reaction_jacobian_triples,
    reaction_sources,
    read_velocity_field,
    write_velocity_field,
)
from fotd.oracle import fd_gradient_check, solve_full_sensitivities


def small_config(**kw):
    base = dict(nx=16, ny=8, length=6.0, height=2.0)
    base.update(kw)
    return ReactiveConfig(**base)


def make_small(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return ReactiveModel(small_config(**kw))


def dense_jacobian(conc, alpha):
    out = np.zeros((conc.shape[0], N_SPECIES, N_SPECIES))
    for i, k, f in reaction_jacobian_triples(conc, alpha):
        out[:, i, k] += f
    return out


class TestNetwork:
    def test_dimensions(self):
        assert N_SPECIES == 23 and N_PARAMS == 34
        assert N_SPECIES * N_PARAMS == 782
        assert TABLE_ALPHA.shape == (34,)

    def test_quotient_rule_entry(self, rng):
        conc = rng.uniform(0.2, 1.5, size=(4, N_SPECIES))
        jac = dense_jacobian(conc, TABLE_ALPHA)
        a1, a2 = TABLE_ALPHA[0], TABLE_ALPHA[1]
        c13 = conc[:, 12]
        c2 = conc[:, 1]
        expected = -a1 * c13 * a2 / (a2 + c2) ** 2
        assert np.allclose(jac[:, 1, 1], expected, rtol=1e-12)

    def test_species20_source_zero_and_catalyst_structure(self, rng):
        conc = rng.uniform(0.2, 1.5, size=(5, N_SPECIES))
        src = reaction_sources(conc, TABLE_ALPHA)
        assert np.abs(src[:, 19]).max() == 0.0
        jac = dense_jacobian(conc, TABLE_ALPHA)
        assert np.abs(jac[:, 19, :]).max() == 0.0  # zero source row
        col = np.abs(jac[:, :, 19]).max(axis=0)
        nz = set(np.nonzero(col)[0].tolist())
        assert nz == {20, 21}  # [20] catalyzes s21 and s22 only

    def test_jacobian_matches_fd(self, rng):
        conc = rng.uniform(0.2, 1.5, size=(3, N_SPECIES))
        jac = dense_jacobian(conc, TABLE_ALPHA)
        h = 1e-6
        worst = 0.0
        for k in range(N_SPECIES):
            bump = np.zeros_like(conc)
            bump[:, k] = h
            fd = (reaction_sources(conc + bump, TABLE_ALPHA)
                  - reaction_sources(conc - bump, TABLE_ALPHA)) / (2 * h)
            scale = max(np.abs(fd).max(), 1e-12)
            worst = max(worst, np.abs(fd - jac[:, :, k]).max() / scale)
        assert worst < 1e-6

    def test_forcing_matches_fd_in_alpha(self, rng):
        conc = rng.uniform(0.2, 1.5, size=(3, N_SPECIES))
        triples = {(i, j): f
                   for i, j, f in reaction_forcing_triples(conc, TABLE_ALPHA)}
        worst = 0.0
        for j in range(N_PARAMS):
            h = 1e-6 * max(TABLE_ALPHA[j], 1e-6)
            bump = np.zeros(N_PARAMS)
            bump[j] = h
            fd = (reaction_sources(conc, TABLE_ALPHA + bump)
                  - reaction_sources(conc, TABLE_ALPHA - bump)) / (2 * h)
            dense = np.zeros_like(fd)
            for i in range(N_SPECIES):
                if (i, j) in triples:
                    dense[:, i] = triples[(i, j)]
            scale = max(np.abs(fd).max(), 1e-12)
            worst = max(worst, np.abs(fd - dense).max() / scale)
        assert worst < 1e-5


class TestGridOperators:
    def test_inlet_ghost_logic(self):
        grid = ChannelGrid(8, 4, 4.0, 2.0)
        ones = np.ones(grid.n)
        # state-type field with matching inlet value: no boundary signal
        lap_state = grid.laplacian(ones, inlet=np.ones(4))
        assert np.abs(lap_state).max() < 1e-12
        # sensitivity-type field: homogeneous Dirichlet inlet is felt
        lap_sens = grid.laplacian(ones, inlet=None).reshape(4, 8)
        assert np.abs(lap_sens[:, 0]).max() > 0.0
        assert np.abs(lap_sens[:, 1:]).max() < 1e-12

    def test_walls_and_outflow_zero_gradient(self):
        grid = ChannelGrid(6, 5, 3.0, 2.0)
        f = np.tile(np.linspace(0.0, 1.0, 6), (5, 1)).ravel()
        wy = np.ones(grid.n)
        ddy_only = grid.advect(f, np.zeros(grid.n), wy, inlet=None)
        assert np.abs(ddy_only.reshape(5, 6)[0]).max() < 1e-12
        assert np.abs(ddy_only.reshape(5, 6)[-1]).max() < 1e-12

    def test_advection_of_linear_profile(self):
        grid = ChannelGrid(10, 6, 5.0, 2.0)
        f = (2.0 * grid.x).copy()
        wx = np.ones(grid.n)
        interior = grid.advect(f, wx, np.zeros(grid.n),
                               inlet=np.zeros(6)).reshape(6, 10)[:, 1:-1]
        assert np.allclose(interior, 2.0, atol=1e-12)


class TestVelocity:
    def test_divergence_free(self):
        grid = ChannelGrid(48, 24, 6.0, 2.0)
        wx, wy = analytic_velocity(grid)
        wx2 = wx.reshape(24, 48)
        wy2 = wy.reshape(24, 48)
        div = ((wx2[1:-1, 2:] - wx2[1:-1, :-2]) / (2 * grid.dx)
               + (wy2[2:, 1:-1] - wy2[:-2, 1:-1]) / (2 * grid.dy))
        assert np.abs(div).max() < 0.05 * np.abs(wx).max() / grid.dx * grid.dx

    def test_walls_no_penetration(self):
        grid = ChannelGrid(32, 16, 6.0, 2.0)
        _wx, wy = analytic_velocity(grid)
        wy2 = wy.reshape(16, 32)
        assert np.abs(wy2[0]).max() < 0.02
        assert np.abs(wy2[-1]).max() < 0.02

    def test_file_roundtrip(self, tmp_path):
        grid = ChannelGrid(12, 6, 6.0, 2.0)
        wx, wy = analytic_velocity(grid)
        path = tmp_path / "vel.csv"
        write_velocity_field(path, 12, 6, (0.0, 6.0, -1.0, 1.0), wx, wy)
        nx, ny, extents, rx, ry = read_velocity_field(path)
        assert (nx, ny) == (12, 6)
        assert extents == (0.0, 6.0, -1.0, 1.0)
        assert np.array_equal(rx, wx) and np.array_equal(ry, wy)

    def test_model_accepts_velocity_file(self, tmp_path):
        grid = ChannelGrid(16, 8, 6.0, 2.0)
        wx, wy = analytic_velocity(grid)
        path = tmp_path / "vel.csv"
        write_velocity_field(path, 16, 8, (0.0, 6.0, -1.0, 1.0), wx, wy)
        model = make_small(velocity_file=str(path))
        assert np.array_equal(model.wx, wx)

    def test_grid_mismatch_rejected(self, tmp_path):
        grid = ChannelGrid(4, 4, 6.0, 2.0)
        wx, wy = analytic_velocity(grid)
        path = tmp_path / "vel.csv"
        write_velocity_field(path, 4, 4, (0.0, 6.0, -1.0, 1.0), wx, wy)
        with pytest.raises(ValueError, match="does not match"):
            make_small(velocity_file=str(path))


class TestModel:
    def test_peclet_warning(self):
        with pytest.warns(RuntimeWarning, match="Peclet"):
            ReactiveModel(small_config())

    def test_dims(self):
        model = make_small()
        assert model.dims() == (16 * 8, 782)

    def test_kappa_constant_within_species_blocks(self):
        model = make_small()
        flat = model.kappa_flat.reshape(N_SPECIES, N_PARAMS)
        assert np.all(flat == flat[:, :1])
        assert len(np.unique(flat[:, 0])) == N_SPECIES

    def test_state_linearization_matches_fd(self, rng):
        model = make_small()
        v = model.initial_state()
        dv = rng.standard_normal(v.shape)
        dv /= np.abs(dv).max()
        h = 1e-6
        fd = (model.nonlinear_rhs(v + h * dv, 0.0)
              - model.nonlinear_rhs(v - h * dv, 0.0)) / (2 * h)
        lin = model.state_linearized_apply(v, dv, 0.0)
        # boundary rows differ: the state path carries the inlet profile,
        # whose contribution cancels in the central difference
        assert np.abs(fd - lin).max() < 1e-5 * max(np.abs(fd).max(), 1.0)

    def test_sensitivity_apply_respects_block_structure(self, rng):
        model = make_small()
        v = model.initial_state()
        n, d = model.dims()
        sens = np.zeros((n, d))
        col = model.fmap.flatten(3, 7) - 1
        sens[:, col] = rng.standard_normal(n)
        out = model.sensitivity_apply(v, sens, 0.0)
        out3 = out.reshape(n, N_SPECIES, N_PARAMS)
        # parameter blocks other than j=7 stay untouched
        mask = np.ones(N_PARAMS, dtype=bool)
        mask[6] = False
        assert np.abs(out3[:, :, mask]).max() == 0.0

    def test_reduces_to_pointwise_ode_network(self):
        """With zero velocity and vanishing diffusion the transport PDE
        collapses to the reaction ODE network at every grid point; the
        oracle sensitivities must match a standalone per-point ODE
        sensitivity solve (derivative correctness against finite
        differences is covered separately above)."""
        model = make_small(mean_speed=0.0, perturbations=(),
                           kappa=np.full(N_SPECIES, 1e-20))
        t_end, dt = 0.05, 1e-3
        snaps = solve_full_sensitivities(
            model, (0.0, t_end), dt, stride=round(t_end / dt))
        full = snaps[-1].matrix

        point = 37
        scale = model.config.time_scale
        c = model.initial_state()[point].copy()
        sens = np.zeros((N_SPECIES, N_PARAMS))

        def rhs(cc, ss):
            src = scale * reaction_sources(cc[None, :], TABLE_ALPHA)[0]
            jac = np.zeros((N_SPECIES, N_SPECIES))
            for i, k, f in reaction_jacobian_triples(cc[None, :], TABLE_ALPHA):
                jac[i, k] += f[0]
            forc = np.zeros((N_SPECIES, N_PARAMS))
            for i, j, f in reaction_forcing_triples(cc[None, :], TABLE_ALPHA):
                forc[i, j] = f[0]
            return src, scale * (jac @ ss) + scale * forc

        for _ in range(round(t_end / dt)):
            k1 = rhs(c, sens)
            k2 = rhs(c + 0.5 * dt * k1[0], sens + 0.5 * dt * k1[1])
            k3 = rhs(c + 0.5 * dt * k2[0], sens + 0.5 * dt * k2[1])
            k4 = rhs(c + dt * k3[0], sens + dt * k3[1])
            c = c + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            sens = sens + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])

        got = full[point].reshape(N_SPECIES, N_PARAMS)
        assert np.abs(got - sens).max() < 1e-8 * max(np.abs(sens).max(), 1.0)

    def test_fd_gradient_check_small_grid(self):
        model = make_small()
        alpha = model.parameters()
        h = 1e-4 * np.maximum(alpha, 1e-8)
        worst = fd_gradient_check(
            model, h=h, t_check=0.02, dt=1e-3,
            param_indices=[(1, 1), (2, 2), (15, 3), (21, 32)])
        assert worst < 1e-3

    def test_dominant_coefficient_heatmap_is_sparse(self):
        """Only the parameter columns that actually force some species
        carry weight, so most heat-map entries sit near zero."""
        from fotd.engine import initialize, rank_decomposition
        from fotd.tensor import coeff_heatmap, tensor_step

        model = make_small()
        dt = 2e-3
        state = initialize(model, 4, dt)
        for _ in range(50):
            state = tensor_step(state, model, dt)
        ranked = rank_decomposition(state)
        heat = coeff_heatmap(ranked, 0, model.fmap)
        small = np.abs(heat) < 0.01 * np.abs(heat).max()
        assert small.mean() > 0.5
