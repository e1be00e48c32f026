"""Experiment runner: lockstep reduction + oracle + baselines, CSV/JSON
diagnostics and optional figure rendering."""

from __future__ import annotations

import json
import os
import platform
import time
import warnings

import numpy as np

from . import __version__
from .config import ConfigError, ResolvedRun, RunConfig, resolve, validate
from .engine import (
    NumericalBlowupError,
    full_system_step,
    initialize,
    rank_decomposition,
    step,
)
from .integrators import NonFiniteStateError, rk4_step
from .linalg import RankDeficientError, weighted_frobenius
from .oracle import SensitivityEnsemble, error_report, fd_gradient_check, \
    otd_baseline_step
from .tensor import coeff_heatmap, tensor_step

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

# Sampled (species, parameter) pairs for the reactive derivative check,
# covering saturating-rate, half-saturation and mass-action parameters.
REACTIVE_FD_PAIRS = [(1, 1), (2, 2), (15, 3), (21, 32), (9, 18)]


def _fmt(x):
    """Shortest-roundtrip float formatting; deterministic across runs."""
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(x) for x in row) + "\n")


def _alpha_digest(alpha):
    return float(np.sum(np.asarray(alpha, dtype=float) ** 2))


class _OtdTrack:
    """Projection-only baseline advanced in lockstep with its own copy of
    the nonlinear state."""

    def __init__(self, state, model):
        self.u = state.basis.columns.copy()
        self.y = state.coeffs.copy()
        self.v = state.model_state.copy()
        self.model = model

    def advance(self, t, dt):
        self.u, self.y = otd_baseline_step(self.u, self.y, self.v,
                                           self.model, t, dt)
        self.v = rk4_step(
            lambda _ts, vb: self.model.nonlinear_rhs(vb, t), self.v, t, dt)

    def error_against(self, full, weights):
        return weighted_frobenius(full - self.u @ self.y.T, weights)


def _coeff_snapshot_files(run: ResolvedRun, state, outdir, tag):
    """Dump ranked coefficient columns at one instant."""
    ranked = rank_decomposition(state, run.config.eps_reg)
    files = []
    if run.tensor:
        fmap = run.model.fmap
        for k in range(min(state.rank, 2)):
            heat = coeff_heatmap(ranked, k, fmap)
            path = os.path.join(outdir, f"heatmap_t{tag}_mode{k + 1}.csv")
            header = [f"param_{j + 1}" for j in range(fmap.n_params)]
            _write_csv(path, header, heat)
            files.append(path)
    else:
        d = state.coeffs.shape[0]
        path = os.path.join(outdir, f"coeffs_t{tag}.csv")
        header = ["param_index"] + [f"yhat_{k + 1}" for k in
                                    range(state.rank)]
        rows = [[float(mi + 1)] + list(ranked.coeffs_ranked[mi, :])
                for mi in range(d)]
        _write_csv(path, header, rows)
        files.append(path)
    return files


def run(config: RunConfig):
    """Execute one configured run; returns the process exit status.

    Writes errors.csv, singulars.csv, coefficient snapshots, manifest.json
    and (optionally) rendered figures into the run directory; failures
    leave a machine-readable error.json behind instead.
    """
    outdir = config.resolved_outdir()
    os.makedirs(outdir, exist_ok=True)
    stale = os.path.join(outdir, "error.json")
    if os.path.exists(stale):
        os.remove(stale)
    issues = validate(config)
    if issues:
        _write_error(outdir, "config", "; ".join(issues))
        return EXIT_CONFIG
    try:
        runinfo = _execute(config, outdir)
    except ConfigError as exc:
        _write_error(outdir, "config", str(exc))
        return EXIT_CONFIG
    except (NumericalBlowupError, NonFiniteStateError, RankDeficientError,
            FloatingPointError) as exc:
        _write_error(outdir, "numeric", str(exc))
        return EXIT_NUMERIC
    if config.figures:
        from . import figures
        figures.render_run(outdir, runinfo)
    return EXIT_OK


def _write_error(outdir, kind, message):
    with open(os.path.join(outdir, "error.json"), "w",
              encoding="ascii") as f:
        json.dump({"error": kind, "message": message}, f, indent=2)


def _execute(config: RunConfig, outdir):
    wall0 = time.time()
    caught = []

    with warnings.catch_warnings(record=True) as grabbed:
        warnings.simplefilter("always")
        run_ = resolve(config)
        cfg = run_.config
        model = run_.model
        dt = run_.dt
        n, d = run_.dims
        weights = model.weights

        if cfg.with_oracle and n * d > cfg.max_oracle_entries:
            raise ConfigError(
                [f"oracle track holds n*d = {n * d} entries "
                 f"(cap {cfg.max_oracle_entries}); disable the oracle or "
                 "reduce the desk-scale configuration"])
        v = model.initial_state()
        sens = np.zeros((n, d))
        v, sens = full_system_step(model, v, sens, 0.0, dt, run_.integrator)
        state = initialize(model, cfg.rank, dt, integrator=run_.integrator,
                           seed=cfg.seed, presolved=(v.copy(), sens.copy()),
                           eps_reg=cfg.eps_reg)

        otd = _OtdTrack(state, model) if cfg.with_otd_baseline else None

        snap_steps = set(run_.snapshot_steps)
        coeff_steps = _coeff_snapshot_plan(run_)
        if run_.tensor:
            def stepper(s, m, h, eps):
                return tensor_step(s, m, h, eps_reg=eps)
        else:
            def stepper(s, m, h, eps):
                return step(s, m, h, integrator=run_.integrator, eps_reg=eps)

        error_rows = [_zero_time_row(cfg)]
        singular_rows = [_zero_time_singulars(cfg)]
        coeff_files = []
        for k in range(1, run_.n_steps + 1):
            t = k * dt
            t_prev = (k - 1) * dt
            if k > 1:  # step 1 was consumed by the initialization
                if cfg.with_oracle:
                    v, sens = full_system_step(model, v, sens, t_prev,
                                               dt, run_.integrator)
                if otd is not None:
                    otd.advance(t_prev, dt)
                state = stepper(state, model, dt, cfg.eps_reg)
            if k in snap_steps:
                rep = None
                ensemble = None
                if cfg.with_oracle:
                    ensemble = SensitivityEnsemble(sens, t)
                    rep = error_report(state, ensemble,
                                       eps_reg=cfg.eps_reg,
                                       n_extra=cfg.oracle_extra_singulars,
                                       time_atol=0.5 * dt)
                error_rows.append(_error_row(cfg, rep, ensemble, otd,
                                             weights, state.t))
                singular_rows.append(_singular_row(cfg, state, rep))
            if k in coeff_steps:
                coeff_files.extend(
                    _coeff_snapshot_files(run_, state, outdir,
                                          f"{t:.6g}"))
        caught = [str(w.message) for w in grabbed]

    wall_total = time.time() - wall0

    fd_result = None
    if cfg.with_fd_check:
        fd_result = _run_fd_check(run_)
        with open(os.path.join(outdir, "fd_check.json"), "w",
                  encoding="ascii") as f:
            json.dump(fd_result, f, indent=2)

    err_header = ["t", "e", "e_r", "e_u", "pct_e", "pct_er", "pct_eu"]
    if otd is not None:
        err_header += ["e_otd", "pct_e_otd"]
    _write_csv(os.path.join(outdir, "errors.csv"), err_header, error_rows)

    sig_header = ["t"] + [f"sigma_{i + 1}" for i in range(cfg.rank)]
    if cfg.with_oracle:
        sig_header += [f"sigma_tilde_{i + 1}" for i in
                       range(cfg.rank + cfg.oracle_extra_singulars)]
        sig_header.append("energy_pct")
    _write_csv(os.path.join(outdir, "singulars.csv"), sig_header,
               singular_rows)

    manifest = {
        "config": cfg.to_manifest_dict(),
        "resolved": {
            "dt": dt, "horizon": run_.horizon, "n_steps": run_.n_steps,
            "stride": run_.stride, "integrator": run_.integrator,
            "n": n, "d": d, "tensor_flattened": run_.tensor,
            "alpha_sum_sq": _alpha_digest(model.parameters()),
        },
        "versions": {
            "fotd": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "seeds": {"init_padding": cfg.seed},
        "outputs": {
            "errors_rows": len(error_rows),
            "singulars_rows": len(singular_rows),
            "coeff_files": [os.path.basename(p) for p in coeff_files],
        },
        "fd_check": fd_result,
        "warnings": caught,
        "wall_time_s": wall_total,
    }
    with open(os.path.join(outdir, "manifest.json"), "w",
              encoding="ascii") as f:
        json.dump(manifest, f, indent=2)
    return {"outdir": outdir, "config": cfg, "tensor": run_.tensor,
            "error_rows": error_rows, "singular_rows": singular_rows,
            "err_header": err_header, "sig_header": sig_header,
            "coeff_files": coeff_files}


def _coeff_snapshot_plan(run_: ResolvedRun):
    count = run_.config.coeff_snapshots
    if count <= 0:
        return set()
    ks = np.linspace(0, run_.n_steps, count + 1)[1:]
    return {int(round(k)) for k in ks}


def _zero_time_row(cfg):
    # at t = 0 both the sensitivities and the reduction are identically
    # zero; relative percentages are undefined (NaN sentinel)
    row = [0.0, 0.0, 0.0, 0.0, np.nan, np.nan, np.nan]
    if cfg.with_otd_baseline:
        row += [0.0, np.nan]
    return row


def _zero_time_singulars(cfg):
    n_cols = cfg.rank
    if cfg.with_oracle:
        # trailing NaN: the energy fraction is undefined at t = 0
        return [0.0] + [0.0] * (n_cols + cfg.rank
                                + cfg.oracle_extra_singulars) + [np.nan]
    return [0.0] + [0.0] * n_cols


def _error_row(cfg, rep, ensemble, otd, weights, t):
    if rep is None:
        row = [t] + [np.nan] * 6
        if otd is not None:
            row += [np.nan, np.nan]
        return row
    row = [rep.t, rep.e, rep.e_r, rep.e_u, rep.pct_e, rep.pct_er,
           rep.pct_eu]
    if otd is not None:
        e_otd = otd.error_against(ensemble.matrix, weights)
        norm = weighted_frobenius(ensemble.matrix, weights)
        row += [e_otd, 100.0 * e_otd / norm if norm > 0 else np.nan]
    return row


def _singular_row(cfg, state, rep):
    ranked = rank_decomposition(state, cfg.eps_reg)
    row = [state.t] + list(ranked.singulars)
    if cfg.with_oracle:
        rep_count = cfg.rank + cfg.oracle_extra_singulars
        if rep is None:
            row += [np.nan] * (rep_count + 1)
        else:
            s_full = rep.singulars_full[:rep_count]
            row += list(s_full) + [0.0] * (rep_count - s_full.size)
            row.append(rep.energy_pct)
    return row


def _run_fd_check(run_: ResolvedRun):
    cfg = run_.config
    model = run_.model
    if cfg.case == "rossler":
        params, h, t_check = [0, 1, 2], 1e-5, min(5.0, run_.horizon / 2)
    elif cfg.case == "ks":
        d = model.dims()[1]
        params, h = [0, d // 2], 1e-4
        t_check = run_.dt * max(2, run_.n_steps // 10)
    else:
        params = REACTIVE_FD_PAIRS
        h = 1e-4 * np.maximum(model.parameters(), 1e-8)
        t_check = run_.dt * max(2, min(50, run_.n_steps // 10))
    worst = fd_gradient_check(model, h=h, t_check=t_check, dt=run_.dt,
                              integrator=run_.integrator,
                              param_indices=params)
    return {"max_relative_discrepancy": float(worst),
            "t_check": float(t_check),
            "sampled": [list(p) if isinstance(p, tuple) else p
                        for p in params]}
