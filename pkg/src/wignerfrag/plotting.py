"""Figures of densities and point configurations, rendered straight to files.

Uses the object-oriented matplotlib API with the Agg canvas, so no display
or global backend switch is needed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .torus import TorusCell


def _new_axes(cell: TorusCell, width: float = 5.0):
    fig = Figure(figsize=(width, width * cell.ly / cell.lx + 0.4), layout="constrained")
    FigureCanvasAgg(fig)
    ax = fig.add_subplot()
    ax.set_xlim(0, cell.lx)
    ax.set_ylim(0, cell.ly)
    ax.set_aspect("equal")
    ax.set_xlabel("x (bohr)")
    ax.set_ylabel("y (bohr)")
    return fig, ax


def plot_density(density, path, peaks=None, classical=None, title: str | None = None) -> Path:
    """Heat map of the density with refined peaks and classical sites overlaid."""
    cell = density.cell
    fig, ax = _new_axes(cell)
    hx, hy = density.spacing
    # grid values are point samples; centre each pixel on its sample
    extent = (-0.5 * hx, cell.lx - 0.5 * hx, -0.5 * hy, cell.ly - 0.5 * hy)
    im = ax.imshow(density.values.T, origin="lower", extent=extent, cmap="viridis", interpolation="bilinear")
    ax.set_xlim(0, cell.lx)
    ax.set_ylim(0, cell.ly)
    fig.colorbar(im, ax=ax, label=r"$n(\mathbf{r})$ (bohr$^{-2}$)", shrink=0.85)
    if peaks:
        xy = np.array([[p[0], p[1]] for p in peaks])
        ax.plot(xy[:, 0], xy[:, 1], "w+", ms=9, mew=1.5, label="density peaks")
    if classical is not None:
        xy = np.asarray(classical)
        ax.plot(xy[:, 0], xy[:, 1], "o", mfc="none", mec="tab:red", ms=9, label="classical")
    if peaks or classical is not None:
        ax.legend(loc="upper right", fontsize="small", framealpha=0.6)
    if title:
        ax.set_title(title)
    path = Path(path)
    fig.savefig(path, dpi=150)
    return path


def plot_configuration(positions, cell: TorusCell, path, title: str | None = None) -> Path:
    """Point charges in the cell, with their nearest periodic images faded."""
    fig, ax = _new_axes(cell)
    xy = np.asarray(positions)
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            if i == j == 0:
                continue
            ax.plot(xy[:, 0] + i * cell.lx, xy[:, 1] + j * cell.ly, "o", color="0.75", ms=6)
    ax.plot(xy[:, 0], xy[:, 1], "o", color="tab:blue", ms=7)
    ax.axhline(0, color="0.5", lw=0.5)
    ax.axvline(0, color="0.5", lw=0.5)
    if title:
        ax.set_title(title)
    path = Path(path)
    fig.savefig(path, dpi=150)
    return path
