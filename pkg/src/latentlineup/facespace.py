"""Linear latent face space plus the latent-space operations used everywhere
else: prior sampling, interpolation, leveled perturbation, the pixel
bootstrap control sampler, and the nearest-neighbor memorization check.

Latent coordinates are whitened (unit variance per component over the
training corpus), so spherical Gaussian noise is commensurate across
components. Any decoder satisfying :class:`Decoder` can stand in for the
bundled eigen-decomposition model.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import CorpusError, ShapeError, SpecError
from .imagecore import Image, pixel_correlation

MODEL_FORMAT_VERSION = 1
PERTURB_LEVELS = (1, 2, 3, 4)


@runtime_checkable
class Decoder(Protocol):
    """Anything that deterministically renders a latent point into an image."""

    @property
    def latent_dim(self) -> int: ...

    @property
    def output_side(self) -> int: ...

    def decode(self, z: np.ndarray) -> Image: ...


@dataclass(frozen=True)
class EigenfaceModel:
    """Mean image + orthonormal principal components + per-component scales.

    ``basis`` rows are flattened component images (d, side*side*3), pairwise
    orthonormal; ``scales`` are the components' standard deviations over the
    training corpus, in non-increasing order.
    """

    image_side: int
    mean: np.ndarray  # (side*side*3,)
    basis: np.ndarray  # (d, side*side*3)
    scales: np.ndarray  # (d,)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        basis = np.atleast_2d(np.asarray(self.basis, dtype=np.float64))
        scales = np.asarray(self.scales, dtype=np.float64).reshape(-1)
        n_px = self.image_side * self.image_side * 3
        if mean.shape[0] != n_px:
            raise ShapeError(f"mean has {mean.shape[0]} values, expected {n_px}")
        if basis.shape != (scales.shape[0], n_px):
            raise ShapeError(f"basis shape {basis.shape} inconsistent with d={scales.shape[0]}, pixels={n_px}")
        if np.any(scales < 0.0) or np.any(np.diff(scales) > 1e-12):
            raise ShapeError("scales must be non-negative and non-increasing")
        gram = basis @ basis.T
        if not np.allclose(gram, np.eye(basis.shape[0]), atol=1e-9):
            raise ShapeError("basis vectors are not orthonormal")
        for name, arr in (("mean", mean), ("basis", basis), ("scales", scales)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def d(self) -> int:
        return self.scales.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.d

    @property
    def output_side(self) -> int:
        return self.image_side

    def mean_image(self) -> Image:
        return Image(np.clip(self.mean, 0.0, 1.0).reshape(self.image_side, self.image_side, 3))

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        """Unclamped reconstruction mean + sum_i z_i * scale_i * basis_i, flattened."""
        z = _check_latent(z, self.d)
        return self.mean + (z * self.scales) @ self.basis

    def decode(self, z: np.ndarray) -> Image:
        raw = self.reconstruct(z)
        return Image(np.clip(raw, 0.0, 1.0).reshape(self.image_side, self.image_side, 3))

    def encode(self, img: Image) -> np.ndarray:
        """Whitened basis coordinates of img - mean; zero where a scale is zero."""
        if img.width != self.image_side or img.height != self.image_side:
            raise ShapeError(f"image is {img.width}x{img.height}, model expects {self.image_side}")
        proj = self.basis @ (img.flat() - self.mean)
        return np.divide(proj, self.scales, out=np.zeros_like(proj), where=self.scales > 0.0)

    def save(self, path: str | Path) -> None:
        """Write the model as an .npz container (see README for the layout)."""
        np.savez(
            path,
            format_version=np.int64(MODEL_FORMAT_VERSION),
            image_side=np.int64(self.image_side),
            mean=self.mean,
            basis=self.basis,
            scales=self.scales,
        )

    @classmethod
    def load(cls, path: str | Path) -> "EigenfaceModel":
        with np.load(path) as data:
            version = int(data["format_version"])
            if version != MODEL_FORMAT_VERSION:
                raise SpecError(f"unsupported model format version {version}")
            return cls(
                image_side=int(data["image_side"]),
                mean=data["mean"],
                basis=data["basis"],
                scales=data["scales"],
            )


def _check_latent(z: np.ndarray, d: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != d:
        raise ShapeError(f"latent point has dimension {z.shape[0]}, model expects {d}")
    if not np.all(np.isfinite(z)):
        raise ShapeError("latent coordinates must be finite")
    return z


def _canonical_signs(basis: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip components so each one's first non-negligible element is positive."""
    flipped = basis.copy()
    for row in flipped:
        nonzero = np.flatnonzero(np.abs(row) > tol)
        if nonzero.size and row[nonzero[0]] < 0.0:
            row *= -1.0
    return flipped


def fit_eigenfaces(images: Sequence[Image], d: int) -> EigenfaceModel:
    """Top-d principal directions of the centered pixel matrix.

    Scales are the sample standard deviations (ddof=1) of the corpus along
    each component; component signs are canonicalized so refits on the same
    corpus are directly comparable.
    """
    if d < 1:
        raise SpecError(f"latent dimension must be >= 1, got {d}")
    if len(images) < d + 1:
        raise CorpusError(f"need at least {d + 1} images to fit d={d}, got {len(images)}")
    side = images[0].side
    if any(img.width != side or img.height != side for img in images):
        raise CorpusError("training images must share one square size")
    data = np.stack([img.flat() for img in images])
    mean = data.mean(axis=0)
    centered = data - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    basis = _canonical_signs(vt[:d])
    scales = s[:d] / np.sqrt(len(images) - 1)
    return EigenfaceModel(image_side=side, mean=mean, basis=basis, scales=scales)


def explained_variance(model: EigenfaceModel) -> np.ndarray:
    """Per-component variance captured by the model, in component order."""
    return model.scales**2


def sample_prior(model: Decoder, rng: np.random.Generator) -> np.ndarray:
    """A latent point drawn from the whitened prior, i.i.d. standard normal."""
    return rng.standard_normal(model.latent_dim)


def interpolate(z0: np.ndarray, z1: np.ndarray, k: int) -> list[np.ndarray]:
    """k evenly spaced points from z0 to z1 inclusive; endpoints exact."""
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape != z1.shape:
        raise ShapeError(f"endpoint dimensions differ: {z0.shape} vs {z1.shape}")
    if k < 2:
        raise SpecError(f"interpolation needs k >= 2 points, got {k}")
    points = list(z0 + np.linspace(0.0, 1.0, k)[:, None] * (z1 - z0))
    points[0] = z0.copy()  # z0 + 1.0*(z1-z0) rounds; the endpoints are exact by contract
    points[-1] = z1.copy()
    return points


def perturb(z: np.ndarray, level: int, base_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """z plus spherical Gaussian noise at geometric intensity base_sigma * 2**(level-1)."""
    if level not in PERTURB_LEVELS:
        raise SpecError(f"perturbation level must be in {PERTURB_LEVELS}, got {level}")
    if base_sigma < 0.0:
        raise SpecError(f"base_sigma must be >= 0, got {base_sigma}")
    z = np.asarray(z, dtype=np.float64)
    sigma = base_sigma * 2.0 ** (level - 1)
    return z + sigma * rng.standard_normal(z.shape)


def nearest_neighbor(corpus: Sequence[Image], query: Image) -> tuple[int, float]:
    """Index and correlation of the corpus image most correlated with the query.

    Ties break toward the lowest index.
    """
    if not corpus:
        raise CorpusError("nearest neighbor needs a non-empty corpus")
    correlations = np.array([pixel_correlation(img, query) for img in corpus])
    best = int(np.argmax(correlations))
    return best, float(correlations[best])


def bootstrap_sample(corpus: Sequence[Image], rng: np.random.Generator) -> Image:
    """Identity-free control image: each pixel location independently takes
    that location's value (all three channels together) from a uniformly
    drawn corpus image, preserving per-location marginals."""
    if not corpus:
        raise CorpusError("bootstrap sampling needs a non-empty corpus")
    shape = corpus[0].pixels.shape
    if any(img.pixels.shape != shape for img in corpus):
        raise CorpusError("corpus images must share one size")
    stack = np.stack([img.pixels for img in corpus])
    picks = rng.integers(0, len(corpus), size=shape[:2])
    rows, cols = np.indices(shape[:2])
    return Image(stack[picks, rows, cols, :])
