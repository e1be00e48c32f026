"""2D advection-diffusion-reaction species transport in a channel.

Twenty-three species ride a prescribed steady divergence-free velocity
field (a parabolic profile plus a stream-function perturbation) with
species-dependent diffusion and a biological reaction network; the
sensitivities target the 34 reaction rate parameters, giving d = 782
flattened sensitivity columns. Every source term is scaled by 1e2 for
time-scale adjustment with the flow, and so are the reaction Jacobian
and the parametric forcing.

Species 24 and 25 appear in the network only as constant external
fields (unit concentration); species 20 has a zero source and acts as a
passive catalyst-like field entering two other source terms.

Spatial discretization: cell-centered central finite differences.
Boundary conditions: Dirichlet tanh profile at the inlet, zero-gradient
outflow, zero-flux walls; sensitivity fields and modes see the
homogeneous (zero inlet) versions. A grid Peclet number above 2 only
triggers a warning recommending refinement.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..tensor import FlattenMap, SpeciesLinearOp

N_SPECIES = 23
N_PARAMS = 34

# Unit concentration assigned to the externally supplied species [24], [25].
EXTERNAL_CONC = 1.0

TABLE_ALPHA = np.array([
    2.54e-2, 160.0, 3.74e-5, 0.449, 1.12e5, 5.13e-4, 2.36e-2, 14.6,
    6.24e-2, 140.5, 3.93e-4, 2.36e-2, 14.6, 5.523, 160.0, 8.01e-4,
    1.11e-3, 3.105, 1060.0, 1.65e-3, 8.177, 3160.0, 3.456, 2.50e5,
    1.80e-5, 50.0, 3.70e-6, 3.00e-8, 9.01e-2, 3190.0, 1.52e-9,
    2.77e-2, 18.0, 2.22e-4,
])


@dataclass(frozen=True)
class _Saturating:
    """sign * a_rate [enzyme][substrate] / (a_half + [substrate])"""

    species: int
    sign: float
    rate: int
    half: int
    enzyme: int
    substrate: int


@dataclass(frozen=True)
class _MassAction:
    """sign * a_rate * product of the factor concentrations"""

    species: int
    sign: float
    rate: int
    factors: tuple


NETWORK = (
    _Saturating(1, +1, 1, 2, 13, 2),
    _MassAction(1, -1, 3, (1, 15)),
    _Saturating(2, -1, 1, 2, 13, 2),
    _Saturating(3, +1, 4, 5, 9, 4),
    _MassAction(3, -1, 6, (3,)),
    _Saturating(3, -1, 7, 8, 17, 3),
    _Saturating(4, +1, 4, 5, 9, 4),
    _Saturating(5, +1, 9, 10, 9, 6),
    _MassAction(5, -1, 11, (5,)),
    _Saturating(5, -1, 12, 13, 17, 5),
    _Saturating(6, -1, 9, 10, 9, 6),
    _Saturating(7, +1, 14, 15, 24, 8),
    _MassAction(7, -1, 16, (7, 15)),
    _MassAction(7, -1, 17, (16, 7)),
    _Saturating(8, -1, 14, 15, 24, 8),
    _Saturating(9, +1, 18, 19, 25, 10),
    _MassAction(9, -1, 20, (9, 15)),
    _Saturating(10, -1, 18, 19, 25, 10),
    _Saturating(11, +1, 21, 22, 9, 12),
    _Saturating(11, -1, 23, 24, 21, 11),
    _Saturating(12, -1, 21, 22, 9, 12),
    _Saturating(13, +1, 25, 26, 9, 14),
    _MassAction(13, -1, 27, (13, 15)),
    _MassAction(13, -1, 28, (13, 19)),
    _Saturating(14, -1, 25, 26, 9, 14),
    _MassAction(15, -1, 3, (1, 15)),
    _MassAction(15, -1, 16, (7, 15)),
    _MassAction(15, -1, 20, (9, 15)),
    _MassAction(15, -1, 27, (13, 15)),
    _MassAction(16, -1, 17, (16, 7)),
    _Saturating(17, +1, 29, 30, 9, 18),
    _MassAction(17, -1, 31, (17, 19)),
    _Saturating(18, -1, 29, 30, 9, 18),
    _MassAction(19, -1, 31, (17, 19)),
    _MassAction(19, -1, 28, (13, 19)),
    _Saturating(21, +1, 32, 33, 20, 22),
    _MassAction(21, -1, 34, (21, 23)),
    _Saturating(22, -1, 32, 33, 20, 22),
    _MassAction(23, -1, 34, (21, 23)),
)


def _conc(c, k):
    """Concentration field for 1-based species k (constant for the
    external species 24, 25)."""
    if k <= N_SPECIES:
        return c[:, k - 1]
    return EXTERNAL_CONC


def reaction_sources(conc, alpha):
    """Raw (unscaled) source terms, one column per species."""
    out = np.zeros((conc.shape[0], N_SPECIES))
    for term in NETWORK:
        if isinstance(term, _Saturating):
            e = _conc(conc, term.enzyme)
            s = _conc(conc, term.substrate)
            val = term.sign * alpha[term.rate - 1] * e * s \
                / (alpha[term.half - 1] + s)
        else:
            val = term.sign * alpha[term.rate - 1]
            for k in term.factors:
                val = val * _conc(conc, k)
        out[:, term.species - 1] += val
    return out


def reaction_jacobian_triples(conc, alpha):
    """Sparse raw Jacobian d(source_i)/d(conc_k) as 0-based
    (i, k, field) triples, merged and deterministically ordered."""
    n = conc.shape[0]
    acc = {}

    def add(i, k, f):
        if k > N_SPECIES:
            return  # external species are not state variables
        key = (i - 1, k - 1)
        if key in acc:
            acc[key] = acc[key] + f
        else:
            acc[key] = np.broadcast_to(f, (n,)).astype(float)

    for term in NETWORK:
        if isinstance(term, _Saturating):
            a = alpha[term.rate - 1]
            b = alpha[term.half - 1]
            e = _conc(conc, term.enzyme)
            s = _conc(conc, term.substrate)
            denom = b + s
            add(term.species, term.enzyme, term.sign * a * s / denom)
            add(term.species, term.substrate,
                term.sign * a * e * b / denom**2)
        else:
            a = alpha[term.rate - 1]
            for pos, k in enumerate(term.factors):
                df = term.sign * a
                for other_pos, other in enumerate(term.factors):
                    if other_pos != pos:
                        df = df * _conc(conc, other)
                add(term.species, k, df)
    return [(i, k, acc[(i, k)]) for i, k in sorted(acc)]


def reaction_forcing_triples(conc, alpha):
    """Sparse raw forcing d(source_i)/d(alpha_j) as 0-based
    (i, j, field) triples."""
    n = conc.shape[0]
    acc = {}

    def add(i, j, f):
        key = (i - 1, j - 1)
        if key in acc:
            acc[key] = acc[key] + f
        else:
            acc[key] = np.broadcast_to(f, (n,)).astype(float)

    for term in NETWORK:
        if isinstance(term, _Saturating):
            a = alpha[term.rate - 1]
            b = alpha[term.half - 1]
            e = _conc(conc, term.enzyme)
            s = _conc(conc, term.substrate)
            denom = b + s
            add(term.species, term.rate, term.sign * e * s / denom)
            add(term.species, term.half, -term.sign * a * e * s / denom**2)
        else:
            val = term.sign
            for k in term.factors:
                val = val * _conc(conc, k)
            add(term.species, term.rate, val)
    return [(i, j, acc[(i, j)]) for i, j in sorted(acc)]


class ChannelGrid:
    """Cell-centered rectangular grid with channel boundary handling.

    Inlet (x = 0): Dirichlet at the cell face (ghost mirrored through the
    prescribed value, or through zero for sensitivity-type fields).
    Outflow (x = L) and walls (y = +/- H/2): zero normal gradient.
    """

    def __init__(self, nx, ny, length, height):
        self.nx = nx
        self.ny = ny
        self.length = length
        self.height = height
        self.dx = length / nx
        self.dy = height / ny
        xc = (np.arange(nx) + 0.5) * self.dx
        yc = -0.5 * height + (np.arange(ny) + 0.5) * self.dy
        xm, ym = np.meshgrid(xc, yc)
        self.x = xm.ravel()
        self.y = ym.ravel()
        self.n = nx * ny
        self.weights = np.full(self.n, self.dx * self.dy)
        self.y_centers = yc

    def _ghosted(self, f, inlet):
        ny, nx = self.ny, self.nx
        f3 = f.reshape(ny, nx, -1)
        k = f3.shape[2]
        g = np.zeros((ny + 2, nx + 2, k))
        g[1:-1, 1:-1] = f3
        g[0, 1:-1] = f3[0]
        g[-1, 1:-1] = f3[-1]
        if inlet is None:
            g[1:-1, 0] = -f3[:, 0]
        else:
            g[1:-1, 0] = 2.0 * np.asarray(inlet).reshape(ny, -1) - f3[:, 0]
        g[1:-1, -1] = f3[:, -1]
        return f3, g

    def advect(self, f, wx, wy, inlet=None):
        """(w . grad) f with central differences, columnwise."""
        one_d = f.ndim == 1
        f3, g = self._ghosted(f if not one_d else f[:, None], inlet)
        ddx = (g[1:-1, 2:] - g[1:-1, :-2]) / (2.0 * self.dx)
        ddy = (g[2:, 1:-1] - g[:-2, 1:-1]) / (2.0 * self.dy)
        wx3 = wx.reshape(self.ny, self.nx)[:, :, None]
        wy3 = wy.reshape(self.ny, self.nx)[:, :, None]
        out = (wx3 * ddx + wy3 * ddy).reshape(self.n, -1)
        return out[:, 0] if one_d else out

    def laplacian(self, f, inlet=None):
        one_d = f.ndim == 1
        f3, g = self._ghosted(f if not one_d else f[:, None], inlet)
        lap = (g[1:-1, 2:] - 2.0 * f3 + g[1:-1, :-2]) / self.dx**2 \
            + (g[2:, 1:-1] - 2.0 * f3 + g[:-2, 1:-1]) / self.dy**2
        out = lap.reshape(self.n, -1)
        return out[:, 0] if one_d else out


def analytic_velocity(grid, mean_speed=1.0,
                      perturbations=((0.15, 1, 0.0), (0.08, 3, 1.7))):
    """Steady divergence-free channel flow: parabolic profile plus
    stream-function vortical perturbations vanishing at the walls.

    Each perturbation is (amplitude, streamwise harmonic, phase) of
    psi = A cos(2 pi k x / L + phi) (1 - (2y/H)^2)^2.
    """
    h = grid.height
    eta = 2.0 * grid.y / h
    wx = 1.5 * mean_speed * (1.0 - eta**2)
    wy = np.zeros_like(wx)
    env = (1.0 - eta**2) ** 2
    denv = 2.0 * (1.0 - eta**2) * (-4.0 * eta / h)
    for amp, harm, phase in perturbations:
        arg = 2.0 * np.pi * harm * grid.x / grid.length + phase
        wx += amp * np.cos(arg) * denv
        wy += amp * (2.0 * np.pi * harm / grid.length) * np.sin(arg) * env
    return wx, wy


def write_velocity_field(path, nx, ny, extents, wx, wy):
    """Dump a velocity field as CSV with a one-line header.

    Header: ``# velocity nx= ny= x0= x1= y0= y1=``; data rows are
    ``wx,wy`` in row-major (y-outer) cell-center order.
    """
    x0, x1, y0, y1 = extents
    with open(path, "w", encoding="ascii") as f:
        f.write(f"# velocity nx={nx} ny={ny} x0={x0!r} x1={x1!r} "
                f"y0={y0!r} y1={y1!r}\n")
        f.write("wx,wy\n")
        for a, b in zip(np.asarray(wx).ravel(), np.asarray(wy).ravel()):
            f.write(f"{float(a)!r},{float(b)!r}\n")


def read_velocity_field(path):
    """Read a velocity CSV dump; returns (nx, ny, extents, wx, wy)."""
    with open(path, "r", encoding="ascii") as f:
        header = f.readline().strip()
        if not header.startswith("# velocity"):
            raise ValueError(f"{path}: missing velocity header line")
        meta = dict(tok.split("=") for tok in header.split()[2:])
        f.readline()  # column names
        data = np.loadtxt(f, delimiter=",")
    nx, ny = int(meta["nx"]), int(meta["ny"])
    extents = tuple(float(meta[k]) for k in ("x0", "x1", "y0", "y1"))
    if data.shape != (nx * ny, 2):
        raise ValueError(
            f"{path}: expected {nx * ny} rows of wx,wy, got {data.shape}"
        )
    return nx, ny, extents, data[:, 0].copy(), data[:, 1].copy()


def default_diffusivities():
    """Per-species diffusion coefficients: a deterministic ramp so that
    diffusion genuinely differs between species."""
    return 0.015 + 0.010 * np.arange(N_SPECIES) / (N_SPECIES - 1)


@dataclass
class ReactiveConfig:
    nx: int = 64
    ny: int = 24
    length: float = 6.0
    height: float = 2.0
    inlet_steepness: float = 0.1
    mean_speed: float = 1.0
    perturbations: tuple = ((0.15, 1, 0.0), (0.08, 3, 1.7))
    kappa: np.ndarray | None = None
    time_scale: float = 100.0
    velocity_file: str | None = None
    peclet_limit: float = 2.0


class ReactiveModel:
    """Tensor-flavored species transport model (pairs with the flattened
    mode/coefficient evolution)."""

    def __init__(self, config: ReactiveConfig | None = None, alpha=None):
        cfg = config if config is not None else ReactiveConfig()
        self.config = cfg
        self.grid = ChannelGrid(cfg.nx, cfg.ny, cfg.length, cfg.height)
        self.fmap = FlattenMap(N_SPECIES, N_PARAMS)
        self.weights = self.grid.weights
        self.kappa_species = (np.asarray(cfg.kappa, dtype=float)
                              if cfg.kappa is not None
                              else default_diffusivities())
        if self.kappa_species.shape != (N_SPECIES,):
            raise ValueError(f"kappa must have length {N_SPECIES}")
        if np.any(self.kappa_species <= 0.0):
            raise ValueError("diffusion coefficients must be positive")
        self.kappa_flat = np.repeat(self.kappa_species, N_PARAMS)
        self._alpha = (TABLE_ALPHA.copy() if alpha is None
                       else np.asarray(alpha, dtype=float))
        if self._alpha.shape != (N_PARAMS,):
            raise ValueError(f"alpha must have length {N_PARAMS}")

        if cfg.velocity_file is not None:
            nx, ny, _ext, wx, wy = read_velocity_field(cfg.velocity_file)
            if (nx, ny) != (cfg.nx, cfg.ny):
                raise ValueError(
                    f"velocity file grid {nx}x{ny} does not match "
                    f"configuration {cfg.nx}x{cfg.ny}"
                )
            self.wx, self.wy = wx, wy
        else:
            self.wx, self.wy = analytic_velocity(
                self.grid, cfg.mean_speed, cfg.perturbations)

        speed = max(np.abs(self.wx).max(), np.abs(self.wy).max())
        spacing = max(self.grid.dx, self.grid.dy)
        self.grid_peclet = speed * spacing / self.kappa_species.min()
        if self.grid_peclet > cfg.peclet_limit:
            warnings.warn(
                f"grid Peclet number {self.grid_peclet:.1f} exceeds "
                f"{cfg.peclet_limit}; consider refining the grid",
                RuntimeWarning,
            )

        d = cfg.inlet_steepness
        h = cfg.height
        y = self.grid.y_centers
        self.inlet_profile = 0.5 * (np.tanh((y + h / 2.0) / d)
                                    - np.tanh((y - h / 2.0) / d))

    # -- interface ------------------------------------------------------
    def dims(self):
        return self.grid.n, self.fmap.d

    def parameters(self):
        return self._alpha.copy()

    def with_parameters(self, alpha):
        return ReactiveModel(self.config, alpha=alpha)

    def initial_state(self):
        """Inlet profile extended downstream, identical for all species."""
        prof = np.repeat(self.inlet_profile, self.grid.nx)
        return np.tile(prof[:, None], (1, N_SPECIES))

    def padding_fields(self, count, seed):
        """Smooth low-mode fields for rank-deficient initialization."""
        rng = np.random.default_rng(seed)
        g = self.grid
        out = np.zeros((g.n, count))
        xs = g.x / g.length
        ys = (g.y + 0.5 * g.height) / g.height
        for j in range(count):
            for p in range(3):
                for q in range(3):
                    a = rng.standard_normal() * np.exp(-0.5 * (p + q))
                    out[:, j] += a * np.cos(np.pi * p * xs) \
                        * np.cos(np.pi * q * ys)
        return out

    def nonlinear_rhs(self, v, t):
        adv = self.grid.advect(v, self.wx, self.wy,
                               inlet=self.inlet_profile)
        lap = self.grid.laplacian(v, inlet=self.inlet_profile)
        src = reaction_sources(v, self._alpha)
        return -adv + lap * self.kappa_species[None, :] \
            + self.config.time_scale * src

    def state_linearized_apply(self, v, dv, t):
        """Directional derivative of the species dynamics along a state
        perturbation dv (n x n_s); sensitivity-type boundary conditions."""
        adv = self.grid.advect(dv, self.wx, self.wy)
        lap = self.grid.laplacian(dv)
        out = -adv + lap * self.kappa_species[None, :]
        scale = self.config.time_scale
        for i, k, f in reaction_jacobian_triples(v, self._alpha):
            out[:, i] += scale * f * dv[:, k]
        return out

    def sensitivity_apply(self, v, sens, t):
        """Flattened linear operator acting on an n x d matrix whose
        columns follow the (species, parameter) flatten map."""
        adv = self.grid.advect(sens, self.wx, self.wy)
        lap = self.grid.laplacian(sens)
        out = -adv + self.kappa_flat[None, :] * lap
        n_r = self.fmap.n_params
        out3 = out.reshape(self.grid.n, N_SPECIES, n_r)
        s3 = sens.reshape(self.grid.n, N_SPECIES, n_r)
        scale = self.config.time_scale
        for i, k, f in reaction_jacobian_triples(v, self._alpha):
            out3[:, i, :] += (scale * f)[:, None] * s3[:, k, :]
        return out

    def species_linear_op(self, v, t):
        scale = self.config.time_scale
        jac = [(i, k, scale * f)
               for i, k, f in reaction_jacobian_triples(v, self._alpha)]
        cols = [(i * N_PARAMS + j, scale * f)
                for i, j, f in reaction_forcing_triples(v, self._alpha)]
        return SpeciesLinearOp(
            fmap=self.fmap, kappa=self.kappa_flat,
            advect=lambda f: self.grid.advect(f, self.wx, self.wy),
            laplacian=lambda f: self.grid.laplacian(f),
            jacobian_triples=jac, forcing_cols=cols,
            weights=self.weights, velocity=(self.wx, self.wy),
        )

    def forcing_dense(self, v, t):
        out = np.zeros((self.grid.n, self.fmap.d))
        scale = self.config.time_scale
        for i, j, f in reaction_forcing_triples(v, self._alpha):
            out[:, i * N_PARAMS + j] = scale * f
        return out

    def forcing_apply(self, v, t, y):
        out = np.zeros((self.grid.n, y.shape[1]))
        scale = self.config.time_scale
        for i, j, f in reaction_forcing_triples(v, self._alpha):
            out += np.outer(scale * f, y[i * N_PARAMS + j, :])
        return out

    def forcing_project(self, v, t, u):
        out = np.zeros((u.shape[1], self.fmap.d))
        uw = u * self.weights[:, None]
        scale = self.config.time_scale
        for i, j, f in reaction_forcing_triples(v, self._alpha):
            out[:, i * N_PARAMS + j] = uw.T @ (scale * f)
        return out
