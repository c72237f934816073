"""Static figures for the command-line reports.

Every figure goes to ``<stem>.png``; ``<stem>.svg`` is added on request.
The CSV files written next to them hold the same data.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
# fixed element ids keep SVG output byte-stable
matplotlib.rcParams["svg.hashsalt"] = "planar-impact"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def save_figure(fig, stem, svg: bool = False) -> list[Path]:
    stem = Path(stem)
    paths = [stem.with_suffix(".png")]
    fig.savefig(paths[0], dpi=120, metadata={"Software": None})
    if svg:
        paths.append(stem.with_suffix(".svg"))
        fig.savefig(paths[1], metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return paths


def plot_regions(ellipse_points, traces: dict, lines=(), stem="regions", svg=False) -> list[Path]:
    """Admissible region outline with each model's predicted-impulse hull.

    ``traces`` maps a label to hull vertices; ``lines`` holds
    ``(label, point_a, point_b)`` segments such as the line of sticking.
    """
    fig, ax = plt.subplots(figsize=(6, 5))
    pts = np.vstack([ellipse_points, ellipse_points[:1]])
    ax.plot(pts[:, 0], pts[:, 1], "k-", lw=1.2, label="admissible boundary")
    for label, a, b in lines:
        ax.plot([a[0], b[0]], [a[1], b[1]], "--", lw=0.8, label=label)
    for label, hull in traces.items():
        h = np.asarray(hull)
        if len(h) >= 3:
            h = np.vstack([h, h[:1]])
            ax.fill(h[:, 0], h[:, 1], alpha=0.25, label=label)
        else:
            ax.plot(h[:, 0], h[:, 1], lw=2, label=label)
    ax.set_xlabel("tangential impulse p_t [N s]")
    ax.set_ylabel("normal impulse p_n [N s]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=7)
    return save_figure(fig, stem, svg)


def plot_error_distributions(dists: dict, stem="error_pdf", svg=False) -> list[Path]:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, d in dists.items():
        if len(d.kde_x):
            ax.plot(d.kde_x, d.kde_density, label=label)
        else:
            ax.stairs(d.density, d.edges, label=label)
    ax.set_xlabel("post-impact velocity error [m/s]")
    ax.set_ylabel("density")
    ax.set_xlim(left=0)
    ax.legend(fontsize=7)
    return save_figure(fig, stem, svg)


def plot_heatmap(rows, title="", stem="heatmap", svg=False) -> list[Path]:
    """``rows`` as produced by ``momentum_heatmap``."""
    arr = np.array([(r[0], r[1], r[2]) for r in rows], dtype=float)
    pt, pn = np.unique(arr[:, 0]), np.unique(arr[:, 1])
    grid = np.full((len(pn), len(pt)), np.nan)
    for x, y, v in arr:
        grid[np.searchsorted(pn, y), np.searchsorted(pt, x)] = v
    fig, ax = plt.subplots(figsize=(6, 4.5))
    mesh = ax.pcolormesh(pt, pn, np.ma.masked_invalid(grid), shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="mean error [m/s]")
    ax.set_xlabel("tangential contact momentum [N s]")
    ax.set_ylabel("normal contact momentum [N s]")
    ax.set_title(title)
    return save_figure(fig, stem, svg)


def plot_parameter_scatter(rows, truth=None, title="", stem="params", svg=False) -> list[Path]:
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(arr[:, 0], arr[:, 1], s=8, alpha=0.6)
    if truth is not None:
        ax.plot([truth[0]], [truth[1]], "r+", ms=12, label="generating")
        ax.legend(fontsize=7)
    ax.set_xlabel("friction coefficient mu")
    ax.set_ylabel("restitution eps")
    ax.set_title(title)
    return save_figure(fig, stem, svg)


def plot_convergence(rows, title="", stem="convergence", svg=False) -> list[Path]:
    """Batch-fit mean and spread against subset size."""
    k = np.array([r.k for r in rows])
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5), sharex=True)
    for ax, mean, std, name in (
        (axes[0], [r.mu_mean for r in rows], [r.mu_std for r in rows], "mu"),
        (axes[1], [r.eps_mean for r in rows], [r.eps_std for r in rows], "eps"),
    ):
        ax.errorbar(k, mean, yerr=std, marker="o", capsize=3)
        ax.set_xscale("log")
        ax.set_xlabel("events per fit")
        ax.set_ylabel(name)
    fig.suptitle(title)
    return save_figure(fig, stem, svg)


def plot_trajectory(series, impacts=(), stem="trajectory", svg=False) -> list[Path]:
    fig, axes = plt.subplots(3, 1, figsize=(6, 6), sharex=True)
    for ax, k, name in zip(axes, range(3), ("x [m]", "y [m]", "theta [rad]")):
        ax.plot(series.t, series.q[:, k], lw=0.8)
        for i in impacts:
            ax.axvline(series.t[i], color="r", lw=0.5)
        ax.set_ylabel(name)
    axes[-1].set_xlabel("t [s]")
    return save_figure(fig, stem, svg)
