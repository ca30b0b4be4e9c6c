"""Optional matplotlib rendering of sweep and histogram reports.

Figures are a convenience layered on top of the CSV/JSON reports, never a
replacement for them; everything here writes PNG files next to the report
and returns the paths. The Agg backend keeps this headless-safe.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first

from .analysis import SweepReport, exponent_histogram
from .engine import Model

__all__ = ["sweep_figure", "histogram_figure", "layer_histogram_figures"]


def sweep_figure(report: SweepReport, path: str | Path) -> Path:
    """Normalized accuracy vs format for every successful record."""
    path = Path(path)
    good = [r for r in report.records if r.error is None]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(
        [r.format for r in good],
        [r.normalized_accuracy for r in good],
        marker="o",
    )
    ax.set_xlabel("weight format")
    ax.set_ylabel("normalized accuracy")
    ax.set_ylim(-0.05, 1.1)
    ax.grid(True, alpha=0.3)
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def histogram_figure(hist: dict, path: str | Path, title: str = "") -> Path:
    """Bar chart of an exponent histogram; the zero bucket sits on the left."""
    path = Path(path)
    exps = sorted(k for k in hist if isinstance(k, int))
    labels = (["zero"] if "zero" in hist else []) + [str(e) for e in exps]
    counts = ([hist["zero"]] if "zero" in hist else []) + [hist[e] for e in exps]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(labels)), counts)
    ax.set_xticks(range(len(labels)), labels, rotation=45)
    ax.set_xlabel("exponent (floor log2 |w|)")
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def layer_histogram_figures(
    model: Model, directory: str | Path, normalized: bool = True
) -> list[Path]:
    """One exponent-histogram PNG per weighted layer."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for idx, layer in model.weighted_layers():
        w = layer.weights
        if normalized:
            w = w / abs(w).max()
        hist = exponent_histogram(w)
        name = f"layer{idx}_{layer.kind}_exponents.png"
        paths.append(histogram_figure(hist, directory / name, title=f"layer {idx} ({layer.kind})"))
    return paths
