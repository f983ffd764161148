"""Least-squares superimposition of portraits onto a composite landmark target.

The corpus pipeline mirrors the preprocessing used to build the training
set: resize to a working resolution, fit a similarity transform from each
portrait's landmarks to the corpus-average landmarks, warp, center-crop,
and downsample to the training size.

Landmark coordinates are (x, y) in pixel units with integer coordinates at
pixel centers, so (0, 0) is the center of the top-left pixel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CorpusError, DegenerateInputError, ShapeError
from .imagecore import Image, center_crop, resize

WORKING_SIDE = 1024
CROP_SIDE = 640
TRAINING_SIDE = 512


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered 2-D facial landmarks for one portrait, in pixel units."""

    points: np.ndarray  # (L, 2) float64
    source_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ShapeError(f"landmarks must be (L, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ShapeError("landmark coordinates must be finite")
        pts = pts.copy() if pts is self.points else pts
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * R(rotation) @ p + (tx, ty), orientation-preserving."""

    scale: float
    rotation: float  # radians, in (-pi, pi]
    tx: float
    ty: float

    def __post_init__(self):
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ShapeError(f"scale must be positive and finite, got {self.scale}")
        if not -math.pi < self.rotation <= math.pi:
            object.__setattr__(self, "rotation", _wrap_angle(self.rotation))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, 0.0, 0.0, 0.0)

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix().T + np.array([self.tx, self.ty])

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        c, s = math.cos(-self.rotation), math.sin(-self.rotation)
        tx, ty = -self.tx, -self.ty
        return SimilarityTransform(
            inv_scale,
            _wrap_angle(-self.rotation),
            inv_scale * (c * tx - s * ty),
            inv_scale * (s * tx + c * ty),
        )


def _wrap_angle(theta: float) -> float:
    """Wrap into (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped <= -math.pi else wrapped


def mean_landmarks(sets: Sequence[LandmarkSet]) -> LandmarkSet:
    """Pointwise arithmetic mean of a consistent corpus of landmark sets."""
    if not sets:
        raise CorpusError("cannot average an empty landmark corpus")
    count = len(sets[0])
    if any(len(s) != count for s in sets):
        raise CorpusError("landmark sets disagree on point count")
    stacked = np.stack([s.points for s in sets])
    return LandmarkSet(stacked.mean(axis=0), source_id="composite")


def fit_similarity(src: LandmarkSet, dst: LandmarkSet) -> SimilarityTransform:
    """Orientation-preserving similarity minimizing sum ||T(src_i) - dst_i||^2.

    Treating centered points as complex numbers, the optimal rotation+scale
    is the least-squares complex regression coefficient, which can never
    reflect; translation re-aligns the centroids. This closed form is the
    global minimum over the similarity group.
    """
    if len(src) != len(dst):
        raise ShapeError(f"landmark counts differ: {len(src)} vs {len(dst)}")
    if len(src) < 2:
        raise DegenerateInputError("need at least two landmarks to fit a similarity")
    s = src.points[:, 0] + 1j * src.points[:, 1]
    d = dst.points[:, 0] + 1j * dst.points[:, 1]
    sc = s - s.mean()
    dc = d - d.mean()
    denom = float(np.sum(sc.real**2 + sc.imag**2))
    if denom == 0.0:
        raise DegenerateInputError("all source landmarks coincide")
    w = complex(np.sum(dc * np.conj(sc))) / denom
    scale = abs(w)
    if scale == 0.0:
        raise DegenerateInputError("source and target landmarks are uncorrelated")
    rotation = _wrap_angle(math.atan2(w.imag, w.real))
    t = complex(d.mean()) - w * complex(s.mean())
    return SimilarityTransform(scale, rotation, t.real, t.imag)


def alignment_residual(t: SimilarityTransform, src: LandmarkSet, dst: LandmarkSet) -> float:
    """Sum of squared distances between T(src) and dst."""
    diff = t.apply(src.points) - dst.points
    return float(np.sum(diff * diff))


def warp(img: Image, t: SimilarityTransform, out_side: int) -> Image:
    """Resample ``img`` so landmarks move by ``t``: output pixel p reads the
    source at t^-1(p), bilinearly interpolated with border clamping."""
    if out_side < 1:
        raise ShapeError(f"output side must be positive, got {out_side}")
    inv = t.inverse()
    xs, ys = np.meshgrid(np.arange(out_side, dtype=np.float64), np.arange(out_side, dtype=np.float64))
    coords = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)
    sample = inv.apply(coords)
    sx = np.clip(sample[:, 0], 0.0, img.width - 1.0)
    sy = np.clip(sample[:, 1], 0.0, img.height - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)
    fx = (sx - x0)[:, None]
    fy = (sy - y0)[:, None]
    px = img.pixels
    top = px[y0, x0] * (1.0 - fx) + px[y0, x1] * fx
    bottom = px[y1, x0] * (1.0 - fx) + px[y1, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    return Image(np.clip(out.reshape(out_side, out_side, 3), 0.0, 1.0))


def rescale_landmarks(lm: LandmarkSet, in_size: tuple[int, int], out_size: tuple[int, int]) -> LandmarkSet:
    """Map landmarks through the same pixel-center change of grid the
    resampler uses: new = (old + 0.5) * out/in - 0.5, per axis."""
    in_w, in_h = in_size
    out_w, out_h = out_size
    pts = lm.points.copy()
    pts[:, 0] = (pts[:, 0] + 0.5) * (out_w / in_w) - 0.5
    pts[:, 1] = (pts[:, 1] + 0.5) * (out_h / in_h) - 0.5
    return LandmarkSet(pts, lm.source_id)


def align_corpus(
    portraits: Sequence[tuple[Image, LandmarkSet]],
    working_side: int = WORKING_SIDE,
    crop_side: int = CROP_SIDE,
    out_side: int = TRAINING_SIDE,
) -> list[Image]:
    """Run the full alignment pipeline over a corpus.

    Per portrait: resize to working_side (rescaling its landmarks), fit a
    similarity onto the corpus-mean landmarks of the rescaled corpus, warp,
    center-crop to crop_side, and downsample to out_side.
    """
    if not portraits:
        raise CorpusError("cannot align an empty corpus")
    rescaled = [
        rescale_landmarks(lm, (img.width, img.height), (working_side, working_side))
        for img, lm in portraits
    ]
    target = mean_landmarks(rescaled)
    aligned = []
    for (img, _), lm in zip(portraits, rescaled):
        try:
            working = resize(img, working_side, working_side)
            transform = fit_similarity(lm, target)
            warped = warp(working, transform, working_side)
            aligned.append(resize(center_crop(warped, crop_side), out_side, out_side))
        except Exception as exc:
            raise CorpusError(f"failed to align portrait {lm.source_id!r}: {exc}") from exc
    return aligned


def read_landmarks(path: str | Path, expected_count: int | None = None) -> LandmarkSet:
    """Load one portrait's landmark file: {"source_id": str, "points": [[x, y], ...]}."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "points" not in doc:
        raise CorpusError(f"{path}: not a landmark document")
    lm = LandmarkSet(np.asarray(doc["points"], dtype=np.float64), str(doc.get("source_id", "")))
    if expected_count is not None and len(lm) != expected_count:
        raise CorpusError(f"{path}: expected {expected_count} landmarks, found {len(lm)}")
    return lm


def write_landmarks(lm: LandmarkSet, path: str | Path) -> None:
    doc = {"source_id": lm.source_id, "points": [[float(x), float(y)] for x, y in lm.points]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
