"""Figure rendering for the CLI report paths.

Every report that writes delimited output can also render a matplotlib
figure next to it.  Figures are always written to files (Agg backend);
nothing here opens a window.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

__all__ = [
    "plot_trajectories",
    "plot_monitors",
    "plot_fields",
    "plot_loops",
    "plot_refinement",
    "plot_memory_curves",
]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trajectories(times, series, path):
    """Probe trajectories u(t) and G(t); ``series`` maps label -> (u, G)."""
    fig, (ax_u, ax_g) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    for label, (u, g) in series.items():
        ax_u.plot(times, u, label=label)
        ax_g.plot(times, g, label=label)
    ax_u.set_ylabel("u")
    ax_g.set_ylabel("G[u]")
    ax_g.set_xlabel("t")
    ax_u.legend(fontsize=8)
    ax_u.set_title("probe trajectories")
    _save(fig, path)


def plot_monitors(report, path):
    fig, axes = plt.subplots(2, 2, figsize=(8, 6))
    t = report.times
    axes[0, 0].plot(t, report.grad_energy + report.boundary_energy)
    axes[0, 0].set_title("gradient + boundary energy")
    axes[0, 1].plot(t[1:], report.dissipation[1:])
    axes[0, 1].set_title("per-step dissipation")
    axes[1, 0].plot(t, report.h22b)
    axes[1, 0].set_title("|u|^2 in the second-order norm")
    axes[1, 1].plot(t, report.sup_u, label="sup |u|")
    axes[1, 1].axhline(report.sup_bound, color="k", ls="--", label="bound")
    axes[1, 1].legend(fontsize=8)
    axes[1, 1].set_title("maximum principle")
    for ax in axes.flat:
        ax.set_xlabel("t")
    _save(fig, path)


def plot_fields(grid, times, u_hist, path, n_snap=6):
    """Solution snapshots: line plots in 1D, final heat map in 2D."""
    fig, ax = plt.subplots(figsize=(7, 4))
    if grid.dim == 1:
        x = grid.coords[0]
        picks = np.unique(np.linspace(0, len(times) - 1, n_snap).astype(int))
        for i in picks:
            ax.plot(x, u_hist[i], label=f"t={times[i]:.3g}")
        ax.set_xlabel("x")
        ax.set_ylabel("u")
        ax.legend(fontsize=8)
        ax.set_title("pressure snapshots")
    else:
        nx, ny = grid.shape
        im = ax.imshow(
            u_hist[-1].reshape(nx, ny).T,
            origin="lower",
            extent=[*grid.extents[0], *grid.extents[1]],
            aspect="auto",
        )
        fig.colorbar(im, ax=ax, label="u")
        ax.set_title(f"final field, t={times[-1]:.3g}")
    _save(fig, path)


def plot_loops(u, g, path):
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(u, g, "-", lw=1.0)
    ax.plot(u[0], g[0], "ko", ms=4)
    ax.set_xlabel("u")
    ax.set_ylabel("G[u]")
    ax.set_title("hysteresis diagram")
    _save(fig, path)


def plot_refinement(taus, monitor_rows, diffs, path):
    """Monitor stability and probe self-convergence across tau levels."""
    fig, (ax_m, ax_d) = plt.subplots(1, 2, figsize=(9, 4))
    keys = sorted(monitor_rows[0].keys())
    positive = all(row[key] > 0 for key in keys for row in monitor_rows)
    for key in keys:
        ax_m.plot(taus, [row[key] for row in monitor_rows], "o-", label=key)
    ax_m.set_xscale("log")
    if positive:
        ax_m.set_yscale("log")
    ax_m.set_xlabel("tau")
    ax_m.set_title("estimate monitors vs tau")
    ax_m.legend(fontsize=7)
    if diffs:
        ax_d.plot(taus[1:], diffs, "s-")
        ax_d.set_xscale("log")
        if min(diffs) > 0:
            ax_d.set_yscale("log")
    ax_d.set_xlabel("tau (finer level)")
    ax_d.set_title("probe differences between levels")
    _save(fig, path)


def plot_memory_curves(curves, path, labels=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, c in enumerate(curves):
        rs, vs = c.corner_arrays()
        rr = np.append(rs, c.support_radius if c.support_radius > rs[-1] else rs[-1] + 0.1)
        vv = np.append(vs, 0.0)
        lbl = labels[k] if labels else None
        ax.plot(rr, vv, "-o", ms=3, label=lbl)
    ax.set_xlabel("threshold r")
    ax.set_ylabel("memory value")
    if labels:
        ax.legend(fontsize=8)
    ax.set_title("memory curves")
    _save(fig, path)
