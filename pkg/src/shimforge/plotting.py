"""Figures rendered next to the text outputs. Uses the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from shimforge.errors import ShapeError  # noqa: E402
from shimforge.metrics.detection import roc_curve  # noqa: E402
from shimforge.metrics.report import MetricsReport  # noqa: E402

# Fixed metadata keeps PNG bytes reproducible.
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_roc(report: MetricsReport, scheme: str, path, fpr: float = 0.01) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for name, scores in sorted(report.rocs.items()):
        s, row = name.split("/", 1)
        if s != scheme:
            continue
        roc = roc_curve(scores["null"], scores["positive"], fpr)
        _, fp, tp = roc.curve()
        ax.step(np.r_[0.0, fp], np.r_[0.0, tp], where="post", label=f"{row} ({roc.tpr:.2f})")
    ax.axvline(fpr, color="0.6", lw=0.8, ls="--")
    ax.set_xscale("symlog", linthresh=1e-3)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"{scheme}: TPR at {fpr:.0%} FPR")
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    return _save(fig, path)


def plot_bit_accuracy(report: MetricsReport, path) -> Path:
    cells = [c for c in report.cells if c.BA is not None]
    schemes = sorted({c.scheme for c in cells})
    rows = list(dict.fromkeys(c.row for c in cells))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(1, len(schemes))
    for i, s in enumerate(schemes):
        vals = [next((c.BA for c in cells if c.scheme == s and c.row == r), np.nan) for r in rows]
        ax.bar(np.arange(len(rows)) + i * width, vals, width, label=s)
    ax.axhline(0.5, color="0.5", lw=0.8, ls=":")
    ax.set_xticks(np.arange(len(rows)) + width * (len(schemes) - 1) / 2, rows, fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("mean bit accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def diff_grid(initial: np.ndarray, iterates: list[tuple[str, np.ndarray]], final: np.ndarray, path) -> Path:
    return _save(diff_grid_figure(initial, iterates, final), path)


def diff_grid_figure(initial: np.ndarray, iterates: list[tuple[str, np.ndarray]], final: np.ndarray):
    """One row: initial image, ``|initial - iterate|`` heatmaps, final image.

    The grid is ``len(iterates) + 2`` panels wide.
    """
    initial = np.asarray(initial, dtype=np.float64)
    for label, img in [("final", final), *iterates]:
        if np.shape(img) != initial.shape:
            raise ShapeError(f"{label}: shape {np.shape(img)} differs from the initial image {initial.shape}")
    diffs = [np.abs(initial - np.asarray(img, dtype=np.float64)).mean(axis=-1) for _, img in iterates]
    vmax = max([float(d.max()) for d in diffs] + [1e-12])
    n = len(iterates) + 2
    fig, axes = plt.subplots(1, n, figsize=(1.6 * n, 1.9), squeeze=False)
    axes = axes[0]
    axes[0].imshow(np.clip(initial, 0, 1))
    axes[0].set_title("initial", fontsize=8)
    for ax, (label, _), d in zip(axes[1:-1], iterates, diffs):
        ax.imshow(d, cmap="magma", vmin=0, vmax=vmax)
        ax.set_title(label, fontsize=8)
    axes[-1].imshow(np.clip(final, 0, 1))
    axes[-1].set_title("final", fontsize=8)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    return fig
