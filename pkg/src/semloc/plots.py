"""Static SVG figures for evaluation outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import FrameError  # noqa: E402


def plot_error_vs_edges(errors: list[FrameError], path) -> None:
    """Scatter of per-frame 2-D error norm against edge-pixel count."""
    edges = np.array([e.edge_count for e in errors])
    norms = np.array([np.hypot(*e.error) for e in errors])
    gated = np.array([e.gated for e in errors], dtype=bool)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.scatter(edges[~gated], norms[~gated], s=12, label="kept")
    if gated.any():
        ax.scatter(edges[gated], norms[gated], s=12, marker="x", label="gated")
        ax.legend()
    ax.set_xlabel("edge pixels")
    ax.set_ylabel("2-D error (m)")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_translation_overlay(errors: list[FrameError], path) -> None:
    """Truth vs estimated planar translations, one segment per frame."""
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    for e in errors:
        ax.plot([e.truth[0], e.estimated[0]], [e.truth[1], e.estimated[1]],
                color="0.7", linewidth=0.8, zorder=1)
    truth = np.array([e.truth for e in errors]).reshape(-1, 2)
    est = np.array([e.estimated for e in errors]).reshape(-1, 2)
    ax.scatter(truth[:, 0], truth[:, 1], s=14, label="truth", zorder=2)
    ax.scatter(est[:, 0], est[:, 1], s=14, marker="x", label="estimated", zorder=3)
    ax.set_xlabel("t_x (m)")
    ax.set_ylabel("t_y (m)")
    ax.set_aspect("equal")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
