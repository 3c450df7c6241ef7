"""Figures for an optimisation run, rendered to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 10,
}


def plot_cost_history(history, path) -> Path:
    """Cost per iteration on a log scale; rejected candidates as crosses."""
    path = Path(path)
    acc = [(r.iteration, r.J) for r in history if r.accepted]
    rej = [(r.iteration, r.J) for r in history if not r.accepted]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if acc:
            it, J = np.array(acc).T
            ax.semilogy(it, np.maximum(J, np.finfo(float).tiny), "o-", ms=3, label="accepted")
        if rej:
            it, J = np.array(rej).T
            ax.semilogy(it, J, "x", color="tab:red", ms=4, alpha=0.6, label="rejected")
        ax.set_xlabel("iteration")
        ax.set_ylabel("J")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_region_areas(history, path, reference_areas=None) -> Path:
    """Area of each region after every accepted step."""
    path = Path(path)
    rows = [r for r in history if r.accepted]
    it = np.array([r.iteration for r in rows])
    areas = np.array([r.areas for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for k in range(areas.shape[1]):
            line, = ax.plot(it, areas[:, k], "o-", ms=3, label=f"S{k + 1}")
            if reference_areas is not None:
                ax.axhline(reference_areas[k], color=line.get_color(), ls="--", lw=0.8)
        ax.set_xlabel("iteration")
        ax.set_ylabel("area")
        ax.legend(ncol=areas.shape[1])
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_partition(mesh, labels, path, title=None) -> Path:
    """Boundary faces coloured by label, seen from +z, -y and +x.

    Each panel shows the centroids of the faces whose normal points towards
    the viewer, so the far side of the surface does not overprint.
    """
    path = Path(path)
    c = mesh.face_centroids
    nrm = mesh.face_normals
    labels = np.asarray(labels)
    cmap = plt.get_cmap("viridis", max(int(labels.max()), 2))
    views = [((0, 1), 2, 1.0, "xy"), ((0, 2), 1, -1.0, "xz"), ((1, 2), 0, 1.0, "yz")]
    with plt.rc_context(STYLE | {"axes.grid": False}):
        fig, axes = plt.subplots(1, 3, figsize=(9.0, 3.2))
        for ax, ((i, j), k, sign, names) in zip(axes, views):
            front = sign * nrm[:, k] > 0
            ax.scatter(c[front, i], c[front, j], c=labels[front], cmap=cmap, vmin=0.5,
                       vmax=cmap.N + 0.5, s=6)
            ax.set_xlabel(names[0])
            ax.set_ylabel(names[1])
            ax.set_aspect("equal")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
