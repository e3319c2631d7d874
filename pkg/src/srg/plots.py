"""SVG figures rendered with matplotlib's Agg-free SVG backend.

Output is byte-stable: the SVG id salt is fixed and the date metadata is
dropped, so the same CSV input always yields the same file.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "svg.hashsalt": "srg",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def line_plot(series: dict, path, title: str, xlabel: str, ylabel: str,
              step: bool = False) -> Path:
    """One line per ``label -> (x, y)`` entry, labels in sorted order."""
    with matplotlib.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.6))
        for label in sorted(series):
            x, y = series[label]
            if step:
                ax.step(x, y, where="post", label=label, gid=f"series-{label}")
            else:
                ax.plot(x, y, marker=".", label=label, gid=f"series-{label}")
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if series:
            ax.legend(fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def scatter_steps(snapshots, optimum, path, polygon=None, title="") -> Path:
    """Grid of 2D scatter panels, one per ``(label, points)`` snapshot."""
    k = len(snapshots)
    cols = min(k, 5)
    rows = -(-k // cols)
    with matplotlib.rc_context(_STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows), squeeze=False)
        for ax in axes.ravel()[k:]:
            ax.set_visible(False)
        for ax, (label, pts) in zip(axes.ravel(), snapshots):
            if polygon is not None and len(polygon):
                poly = np.vstack([polygon, polygon[:1]])
                ax.fill(poly[:, 0], poly[:, 1], color="tab:orange", alpha=0.2, lw=0)
            pts = np.asarray(pts)
            ax.scatter(pts[:, 0], pts[:, 1], s=6, color="tab:blue")
            ax.scatter([optimum[0]], [optimum[1]], marker="*", s=80, color="tab:red")
            ax.set_xlim(-0.5, 1.5)
            ax.set_ylim(-0.5, 1.5)
            ax.set_title(label, fontsize=8)
            ax.set_aspect("equal")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)
