"""Deterministic raster primitives: Lanczos resampling, center cropping,
pixel correlation, and 8-bit PNG I/O.

All pixel math is float64 in [0, 1]; quantization to bytes happens only at
file I/O. Every public operation returns a fresh Image and never mutates
its inputs, so values are freely shareable across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import CropError, ShapeError, SpecError, UndefinedValueError

CHANNELS = 3


@dataclass(frozen=True)
class Image:
    """An RGB raster: ``pixels`` has shape (height, width, 3), float64 in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != CHANNELS:
            raise ShapeError(f"expected (height, width, {CHANNELS}) pixels, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError(f"image must have positive dimensions, got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ShapeError("pixel intensities must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ShapeError("pixel intensities must lie in [0, 1]")
        px = px.copy() if px is self.pixels else px
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def side(self) -> int:
        """Side length of a square image; raises for non-square ones."""
        if self.width != self.height:
            raise ShapeError(f"image is {self.width}x{self.height}, not square")
        return self.width

    def flat(self) -> np.ndarray:
        """Row-major flattened copy of all channel intensities."""
        return self.pixels.reshape(-1).copy()


def constant_image(width: int, height: int, value: float = 0.0) -> Image:
    return Image(np.full((height, width, CHANNELS), float(value)))


@dataclass(frozen=True)
class ResampleSpec:
    """Output geometry and kernel radius for :func:`lanczos_resample`."""

    out_width: int
    out_height: int
    kernel_radius: int = 3

    def __post_init__(self):
        if self.out_width < 1 or self.out_height < 1:
            raise SpecError(f"output size must be positive, got {self.out_width}x{self.out_height}")
        if self.kernel_radius < 1:
            raise SpecError(f"kernel radius must be >= 1, got {self.kernel_radius}")


def lanczos_kernel(x: np.ndarray, radius: int) -> np.ndarray:
    """Windowed-sinc weight sinc(x)*sinc(x/radius), zero outside |x| >= radius.

    Exactly zero at nonzero integer offsets and exactly one at zero, so a
    same-size resample reduces to the identity.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    inside = np.abs(x) < radius
    xi = x[inside]
    with np.errstate(divide="ignore", invalid="ignore"):
        val = radius * np.sin(np.pi * xi) * np.sin(np.pi * xi / radius) / (np.pi * np.pi * xi * xi)
    val = np.where(xi == 0.0, 1.0, val)
    # sinc vanishes identically at the remaining integers; enforce despite roundoff
    val = np.where((xi != 0.0) & (xi == np.rint(xi)), 0.0, val)
    out[inside] = val
    return out


def _resample_matrix(n_in: int, n_out: int, radius: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic weight matrix for one separable axis.

    Output sample j reads the source at (j + 0.5) * n_in / n_out - 0.5
    (pixel-center convention); taps outside the image clamp to the border.
    """
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    offsets = np.arange(-radius + 1, radius + 1)  # covers every |x| < radius tap
    taps = np.floor(centers)[:, None] + offsets[None, :]
    weights = lanczos_kernel(centers[:, None] - taps, radius)
    weights /= weights.sum(axis=1, keepdims=True)
    cols = np.clip(taps, 0, n_in - 1).astype(np.intp)
    matrix = np.zeros((n_out, n_in))
    np.add.at(matrix, (np.repeat(np.arange(n_out), offsets.size), cols.reshape(-1)), weights.reshape(-1))
    return matrix


def lanczos_resample(img: Image, spec: ResampleSpec) -> Image:
    """Separable Lanczos resampling to ``spec``'s geometry.

    Kernel weights are normalized to sum to one per output sample, border
    handling clamps source coordinates, and the result is clamped to [0, 1].
    """
    wy = _resample_matrix(img.height, spec.out_height, spec.kernel_radius)
    wx = _resample_matrix(img.width, spec.out_width, spec.kernel_radius)
    out = np.einsum("oh,hwc->owc", wy, img.pixels)
    out = np.einsum("pw,owc->opc", wx, out)
    return Image(np.clip(out, 0.0, 1.0))


def resize(img: Image, width: int, height: int, kernel_radius: int = 3) -> Image:
    return lanczos_resample(img, ResampleSpec(width, height, kernel_radius))


def center_crop(img: Image, side: int) -> Image:
    """The side x side window anchored at (floor((w-side)/2), floor((h-side)/2))."""
    if side < 1:
        raise CropError(f"crop side must be positive, got {side}")
    if side > img.width or side > img.height:
        raise CropError(f"crop side {side} exceeds image {img.width}x{img.height}")
    x0 = (img.width - side) // 2
    y0 = (img.height - side) // 2
    return Image(img.pixels[y0 : y0 + side, x0 : x0 + side, :])


def pixel_correlation(a: Image, b: Image) -> float:
    """Pearson correlation over all flattened channel intensities."""
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    x = a.flat()
    y = b.flat()
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.dot(xc, xc))
    sy = np.sqrt(np.dot(yc, yc))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedValueError("correlation undefined for a zero-variance image")
    return float(np.clip(np.dot(xc, yc) / (sx * sy), -1.0, 1.0))


def to_bytes(img: Image) -> np.ndarray:
    """Quantize intensities to uint8, rounding half up: byte = floor(i*255 + 0.5)."""
    return np.floor(img.pixels * 255.0 + 0.5).astype(np.uint8)


def from_bytes(data: np.ndarray) -> Image:
    data = np.asarray(data)
    if data.dtype != np.uint8:
        raise ShapeError(f"expected uint8 pixel bytes, got {data.dtype}")
    return Image(data.astype(np.float64) / 255.0)


def write_png(img: Image, path: str | Path) -> None:
    PILImage.fromarray(to_bytes(img), mode="RGB").save(path, format="PNG")


def read_png(path: str | Path) -> Image:
    with PILImage.open(path) as pil:
        return from_bytes(np.asarray(pil.convert("RGB")))


def png_bytes(img: Image) -> bytes:
    """Deterministic in-memory PNG encoding of ``img``."""
    import io

    buf = io.BytesIO()
    PILImage.fromarray(to_bytes(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
