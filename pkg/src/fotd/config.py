"""Run configuration, presets and validation for the experiment runner."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass


from .models import KsConfig, KsModel, ReactiveConfig, ReactiveModel, \
    RosslerModel

CASES = ("rossler", "ks", "reactive")

# Default output root; overridden by the environment variable below or by
# an explicit outdir.
OUTPUT_ROOT_ENV = "FOTD_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "fotd_runs"


@dataclass
class RunConfig:
    """Fully explicit description of one experiment run."""

    case: str
    preset: str = "desk"
    rank: int = 2
    dt: float | None = None
    horizon: float | None = None
    stride: int | None = None
    seed: int = 0
    eps_reg: float = 1e-12
    with_oracle: bool = True
    with_otd_baseline: bool = False
    with_fd_check: bool = False
    figures: bool = True
    oracle_extra_singulars: int = 5
    coeff_snapshots: int = 4
    outdir: str | None = None
    velocity_file: str | None = None
    max_oracle_entries: int = 4_000_000

    def resolved_outdir(self):
        if self.outdir is not None:
            return self.outdir
        root = os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)
        return os.path.join(root, f"{self.case}-{self.preset}-r{self.rank}")

    def to_manifest_dict(self):
        out = asdict(self)
        out["outdir"] = self.resolved_outdir()
        return out


# Per-case preset tables: (dt, horizon, extras).
PRESETS = {
    "rossler": {
        "desk": dict(dt=1e-3, horizon=10.0),
    },
    "ks": {
        "desk": dict(dt=0.05, horizon=20.0,
                     model=dict(nu=1.0, length=64.0, n=256,
                                param_window=5.0)),
        "mini": dict(dt=0.05, horizon=2.0,
                     model=dict(nu=1.0, length=32.0, n=64,
                                param_window=0.5)),
        # scale reported for the full study; heavy, ships for completeness
        "paper": dict(dt=0.01, horizon=100.0,
                      model=dict(nu=1.0, length=1000.0, n=8192,
                                 param_window=10.0)),
    },
    "reactive": {
        "desk": dict(dt=2e-3, horizon=1.0, stride=25,
                     model=dict(nx=64, ny=24)),
        "mini": dict(dt=2e-3, horizon=0.1, stride=10,
                     model=dict(nx=16, ny=8)),
    },
}

INTEGRATORS = {"rossler": "rk4", "ks": "etdrk4", "reactive": "rk4"}


@dataclass
class ResolvedRun:
    """Concrete objects for one run: model, stepping plan, bookkeeping."""

    config: RunConfig
    model: object
    dt: float
    horizon: float
    n_steps: int
    stride: int
    integrator: str
    tensor: bool
    dims: tuple

    @property
    def snapshot_steps(self):
        return list(range(0, self.n_steps + 1, self.stride))


def build_model(config: RunConfig, preset: dict):
    if config.case == "rossler":
        return RosslerModel(), False
    if config.case == "ks":
        dt = config.dt if config.dt is not None else preset["dt"]
        kw = dict(preset.get("model", {}))
        kw["dt"] = dt
        kw["horizon"] = config.horizon if config.horizon is not None \
            else preset["horizon"]
        kw["seed"] = 7 + config.seed
        return KsModel(KsConfig(**kw)), False
    if config.case == "reactive":
        kw = dict(preset.get("model", {}))
        if config.velocity_file is not None:
            kw["velocity_file"] = config.velocity_file
        return ReactiveModel(ReactiveConfig(**kw)), True
    raise ValueError(f"unknown case '{config.case}'")


def _resolve_timing(config: RunConfig, preset: dict):
    dt = config.dt if config.dt is not None else preset["dt"]
    horizon = config.horizon if config.horizon is not None \
        else preset["horizon"]
    stride = config.stride if config.stride is not None \
        else preset.get("stride", 10)
    return dt, horizon, stride


def validate(config: RunConfig):
    """Schema and cross-field checks; returns a list of violations
    (empty when the configuration is runnable). No side effects."""
    issues = []
    if config.case not in CASES:
        issues.append(f"unknown case '{config.case}' (choose from {CASES})")
        return issues
    presets = PRESETS[config.case]
    if config.preset not in presets:
        issues.append(
            f"unknown preset '{config.preset}' for case {config.case} "
            f"(choose from {sorted(presets)})")
        return issues
    preset = presets[config.preset]
    dt, horizon, stride = _resolve_timing(config, preset)
    if config.rank < 1:
        issues.append("rank must be at least 1")
    if dt <= 0:
        issues.append("dt must be positive")
    if horizon <= dt:
        issues.append("horizon must exceed dt")
    if stride < 1:
        issues.append("stride must be at least 1")
    if config.eps_reg <= 0:
        issues.append("eps_reg must be positive")
    if dt > 0:
        n_steps = horizon / dt
        if abs(n_steps - round(n_steps)) > 1e-9:
            issues.append("horizon must be an integer number of steps")
        elif round(n_steps) % stride != 0:
            issues.append("stride must divide the total step count")
    if config.case == "ks" and dt > 0:
        window = preset["model"]["param_window"]
        d_par = window / dt
        if abs(d_par - round(d_par)) > 1e-9:
            issues.append(
                "impulse times must align with the step grid "
                "(param_window / dt is not an integer)")
        elif config.rank > round(d_par):
            issues.append("rank exceeds parameter count")
    if config.case == "rossler" and config.rank > 3:
        issues.append("rank exceeds parameter count")
    if config.case == "reactive" and config.rank > 782:
        issues.append("rank exceeds parameter count")
    if config.with_otd_baseline and config.case == "reactive":
        issues.append("the projection baseline requires a column-uniform "
                      "linear operator; unsupported for the reactive case")
    if config.velocity_file is not None:
        if config.case != "reactive":
            issues.append("velocity_file applies to the reactive case only")
        elif not os.path.exists(config.velocity_file):
            issues.append(f"velocity file not found: {config.velocity_file}")
    if config.coeff_snapshots < 0:
        issues.append("coeff_snapshots must be non-negative")
    return issues


class ConfigError(ValueError):
    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


def resolve(config: RunConfig) -> ResolvedRun:
    issues = validate(config)
    if issues:
        raise ConfigError(issues)
    preset = PRESETS[config.case][config.preset]
    dt, horizon, stride = _resolve_timing(config, preset)
    model, tensor = build_model(config, preset)
    n, d = model.dims()
    if config.rank > min(n, d):
        raise ConfigError([f"rank {config.rank} exceeds min(n, d) = "
                           f"{min(n, d)}"])
    return ResolvedRun(
        config=config, model=model, dt=dt, horizon=horizon,
        n_steps=int(round(horizon / dt)), stride=stride,
        integrator=INTEGRATORS[config.case], tensor=tensor, dims=(n, d),
    )
