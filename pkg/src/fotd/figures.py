"""Figure rendering for run directories (written next to the CSV output)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _columns(rows, header):
    arr = np.asarray(rows, dtype=float)
    return {name: arr[:, i] for i, name in enumerate(header)}


def render_errors(outdir, rows, header):
    cols = _columns(rows, header)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    t = cols["t"]
    for name, label, style in (
        ("pct_e", "reduction", "-"),
        ("pct_er", "resolved part", "--"),
        ("pct_eu", "optimal rank-r", ":"),
        ("pct_e_otd", "projection baseline", "-."),
    ):
        if name in cols:
            series = cols[name]
            good = np.isfinite(series) & (series > 0)
            if good.any():
                ax.semilogy(t[good], series[good], style, label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("% error")
    ax.legend(frameon=False, fontsize=9)
    ax.set_title("Relative reconstruction error")
    fig.tight_layout()
    path = os.path.join(outdir, "errors.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_singulars(outdir, rows, header):
    cols = _columns(rows, header)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    t = cols["t"]
    for name in header[1:]:
        series = cols[name]
        good = np.isfinite(series) & (series > 0)
        if not good.any():
            continue
        if name.startswith("sigma_tilde"):
            ax.semilogy(t[good], series[good], ":", color="0.45", lw=0.9)
        else:
            ax.semilogy(t[good], series[good], "-", lw=1.4)
    ax.set_xlabel("t")
    ax.set_ylabel("singular values")
    ax.set_title("Reduction (solid) vs instantaneous optimum (dotted)")
    fig.tight_layout()
    path = os.path.join(outdir, "singulars.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_coeff_file(path):
    """Render one coefficient snapshot CSV (vector or heat-map layout)."""
    base = os.path.basename(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    if base.startswith("heatmap"):
        span = np.abs(data).max() or 1.0
        im = ax.imshow(data, aspect="auto", cmap="RdBu_r",
                       vmin=-span, vmax=span)
        ax.set_xlabel("reaction parameter")
        ax.set_ylabel("species")
        fig.colorbar(im, ax=ax, shrink=0.85)
    else:
        idx = data[:, 0]
        for k in range(1, data.shape[1]):
            ax.plot(idx, data[:, k], lw=1.0, label=f"mode {k}")
        ax.set_xlabel("parameter index")
        ax.set_ylabel("ranked coefficient")
        ax.legend(frameon=False, fontsize=8)
    ax.set_title(base.replace(".csv", ""))
    fig.tight_layout()
    out = path.replace(".csv", ".png")
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return out


def render_run(outdir, runinfo):
    """Render the standard figure set for a completed run."""
    made = [render_errors(outdir, runinfo["error_rows"],
                          runinfo["err_header"]),
            render_singulars(outdir, runinfo["singular_rows"],
                             runinfo["sig_header"])]
    for path in runinfo["coeff_files"]:
        made.append(render_coeff_file(path))
    return made
