"""Figure rendering for the CLI report paths.

Image grids are exact pixel mosaics (rows x cols tiles, no padding), so
their geometry is testable down to the output dimensions; curve plots are
rendered with matplotlib to PNG files alongside the delimited exports.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ShapeError, SpecError
from .imagecore import Image, write_png
from .turing import DetectionCurve


def assemble_grid(images: Sequence[Image], rows: int, cols: int) -> Image:
    """Tile rows x cols equally-sized images into one mosaic, row-major."""
    if rows < 1 or cols < 1:
        raise SpecError(f"grid needs positive geometry, got {rows}x{cols}")
    if len(images) != rows * cols:
        raise SpecError(f"grid {rows}x{cols} needs {rows * cols} images, got {len(images)}")
    shape = images[0].pixels.shape
    if any(img.pixels.shape != shape for img in images):
        raise ShapeError("grid tiles must share one size")
    bands = [
        np.concatenate([img.pixels for img in images[r * cols : (r + 1) * cols]], axis=1)
        for r in range(rows)
    ]
    return Image(np.concatenate(bands, axis=0))


def save_grid(images: Sequence[Image], rows: int, cols: int, path: str | Path) -> Image:
    grid = assemble_grid(images, rows, cols)
    write_png(grid, path)
    return grid


def save_detection_figure(curves: Mapping[str, DetectionCurve], path: str | Path) -> None:
    """Accuracy vs stimulus size per generator, Wilson error bars, dotted
    chance line at 0.5."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label in sorted(curves):
        points = curves[label].points
        if not points:
            continue
        sizes = [pt.size for pt in points]
        acc = np.array([pt.accuracy for pt in points])
        err_low = acc - np.array([pt.ci_low for pt in points])
        err_high = np.array([pt.ci_high for pt in points]) - acc
        ax.errorbar(sizes, acc, yerr=[err_low, err_high], marker="o", capsize=3, label=label)
    ax.axhline(0.5, linestyle=":", color="gray", label="chance")
    ax.set_xscale("log", base=2)
    all_sizes = sorted({pt.size for c in curves.values() for pt in c.points})
    if all_sizes:
        ax.set_xticks(all_sizes)
        ax.set_xticklabels([str(s) for s in all_sizes])
    ax.set_xlabel("stimulus size (px)")
    ax.set_ylabel("p(correct)")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_distance_figure(distances: Sequence[float], path: str | Path) -> None:
    """Target distance per search round (round 0 = initial seed)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    rounds = np.arange(len(distances))
    ax.plot(rounds, distances, marker="o")
    ax.set_xlabel("round")
    ax.set_ylabel("latent distance to target")
    ax.set_xticks(rounds)
    ax.set_ylim(bottom=0.0)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
