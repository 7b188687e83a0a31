"""Figures for the bench, bounds, sweep and train reports.

Everything renders through the Agg backend straight to a file, so the CLI
works on machines without a display.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 10.0,
    "axes.linewidth": 0.8,
    "axes.labelsize": "medium",
    "axes.titlesize": "medium",
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.5,
    "lines.markersize": 5,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "legend.fontsize": "small",
    "legend.frameon": False,
    "figure.figsize": (5.0, 3.6),
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_bench(rows, path):
    """Encoding wall time and nnz(B) against depth."""
    d = np.array([r["d"] for r in rows])
    t = np.array([r["seconds"] for r in rows])
    nnz = np.array([r["nnz"] for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(d, t, "o-", color="C0", label="wall time")
        ax.set_xlabel("depth d")
        ax.set_ylabel("seconds", color="C0")
        ax.set_xticks(d)
        ax2 = ax.twinx()
        ax2.plot(d, nnz, "s--", color="C1", label="nnz(B)")
        ax2.set_ylabel("nnz(B)", color="C1")
        ax2.grid(False)
        return _save(fig, path)


def plot_bounds(rows, path):
    """Empirical mean overlap against the lower/upper envelope, one point per grid cell."""
    g0 = np.array([r["gamma0"] for r in rows])
    g1 = np.array([r["gamma1"] for r in rows])
    q = np.array([r["mean_q"] for r in rows])
    se = np.array([r["se"] for r in rows])
    order = np.argsort(g0)
    x = np.arange(len(rows))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.5, 3.6))
        ax.fill_between(x, g0[order], g1[order], color="0.85", step="mid", label="envelope")
        ax.errorbar(x, q[order], yerr=4 * se[order], fmt="o", ms=3, color="C3",
                    label="mean Q (4 SE)")
        ax.set_yscale("log")
        ax.set_xlabel("grid point (sorted by lower bound)")
        ax.set_ylabel("common 1-bits")
        ax.legend()
        return _save(fig, path)


def plot_sweep(results, path, lam_l_key="lambda_l", lam_g_key="lambda_g"):
    """Validation RMSE heat map over the (lambda_l, lambda_g) grid."""
    ll = sorted({r[lam_l_key] for r in results})
    lg = sorted({r[lam_g_key] for r in results})
    grid = np.full((len(ll), len(lg)), np.nan)
    for r in results:
        grid[ll.index(r[lam_l_key]), lg.index(r[lam_g_key])] = r["val_rmse"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        im = ax.imshow(grid, origin="lower", cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(lg)), [f"{v:g}" for v in lg])
        ax.set_yticks(range(len(ll)), [f"{v:g}" for v in ll])
        ax.set_xlabel(r"$\lambda_g$")
        ax.set_ylabel(r"$\lambda_l$")
        ax.grid(False)
        fig.colorbar(im, ax=ax, label="validation RMSE")
        return _save(fig, path)


def plot_history(history, path):
    """Objective per outer iteration."""
    h = np.asarray(history, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(np.arange(len(h)), h, ".-")
        ax.set_xlabel("outer iteration")
        ax.set_ylabel("objective")
        return _save(fig, path)
