"""Per-pixel salience maps and per-region salience scores.

Three measurement routes are provided: geometric (object size and
centeredness), depth inversion, and the minimum barrier distance (MBD)
transform seeded on the image border.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from prominence import kernels
from prominence.imagecore import DepthMap, RasterImage, Region, clip_box

DEFAULT_PASSES = 3
DEFAULT_SIGMA_C = 0.33
EXACT_SIZE_CAP = 64


class EmptyRegionError(ValueError):
    pass


@dataclass(frozen=True)
class SalienceMap:
    """Salience in [0, 1] per pixel, shape ``(height, width)``; 1 is most salient."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("salience map must be 2-D")
        if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0.0 or v.max(initial=0.0) > 1.0:
            raise ValueError("salience values must lie in [0, 1]")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def dims(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def data(self) -> np.ndarray:
        return self.values.reshape(-1)

    def to_uint8(self) -> np.ndarray:
        """Display quantization, ``round(255 * s)``."""
        return np.floor(self.values * 255.0 + 0.5).astype(np.uint8)

    def save_png(self, path) -> None:
        Image.fromarray(self.to_uint8()).save(os.fspath(path), format="PNG")


@dataclass(frozen=True)
class RegionScore:
    region_id: int
    size_fraction: float
    centeredness: float
    salience_aggregate: float
    detection_confidence: float = 1.0

    @property
    def prominence(self) -> float:
        return self.detection_confidence * self.salience_aggregate


# -- region helpers ---------------------------------------------------------

def region_mask(region, dims: tuple[int, int]) -> np.ndarray:
    """Boolean ``(height, width)`` mask for a box, :class:`Region` or mask.

    Boxes are clipped to the image; masks must already have image shape.
    """
    width, height = dims
    if isinstance(region, Region):
        region = region.box
    if isinstance(region, np.ndarray) and region.ndim == 2:
        if region.shape != (height, width):
            raise ValueError(f"mask shape {region.shape} does not match image {height}x{width}")
        mask = region.astype(bool)
    else:
        x, y, w, h = clip_box(region, dims)
        mask = np.zeros((height, width), dtype=bool)
        mask[y:y + h, x:x + w] = True
    if not mask.any():
        raise EmptyRegionError("region is empty after clipping")
    return mask


def object_size(region, dims: tuple[int, int]) -> float:
    """Fraction of the image covered by the region."""
    mask = region_mask(region, dims)
    return float(mask.sum()) / (dims[0] * dims[1])


def _center_distance(dims):
    width, height = dims
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    yy, xx = np.mgrid[0:height, 0:width]
    dist = np.hypot(xx - cx, yy - cy)
    d_max = math.hypot(cx, cy)
    return dist, d_max


def centeredness_map(dims: tuple[int, int]) -> SalienceMap:
    """Per-pixel ``1 - d(p, center) / d_max``.

    The maximum of this field over a region is that region's centeredness.
    """
    dist, d_max = _center_distance(dims)
    if d_max == 0:
        return SalienceMap(np.ones_like(dist))
    return SalienceMap(np.clip(1.0 - dist / d_max, 0.0, 1.0))


def object_centeredness(region, dims: tuple[int, int]) -> float:
    """Centeredness of the region pixel closest to the image center.

    Ties between equally close pixels go to the smallest (row, column);
    the returned value is the same either way.
    """
    mask = region_mask(region, dims)
    dist, d_max = _center_distance(dims)
    if d_max == 0:
        return 1.0
    flat = np.where(mask, dist, np.inf).reshape(-1)
    best = int(np.argmin(flat))  # first minimum in row-major order
    return float(min(max(1.0 - flat[best] / d_max, 0.0), 1.0))


def region_salience(smap: SalienceMap, region, mode: str = "mean") -> float:
    mask = region_mask(region, smap.dims)
    vals = smap.values[mask]
    if mode == "mean":
        return float(min(max(vals.mean(), 0.0), 1.0))
    if mode == "max":
        return float(vals.max())
    raise ValueError(f"unknown aggregation mode {mode!r}")


def score_region(smap: SalienceMap, region, region_id: int = 0, mode: str = "mean",
                 detection_confidence: float | None = None) -> RegionScore:
    """Bundle size, centeredness and aggregated salience for one region."""
    if detection_confidence is None:
        detection_confidence = region.confidence if isinstance(region, Region) else 1.0
    return RegionScore(
        region_id=region_id,
        size_fraction=object_size(region, smap.dims),
        centeredness=object_centeredness(region, smap.dims),
        salience_aggregate=region_salience(smap, region, mode),
        detection_confidence=float(detection_confidence),
    )


# -- depth -----------------------------------------------------------------

def depth_salience(depth: DepthMap) -> SalienceMap:
    """Inverted frame-normalized depth: nearest plane 1, farthest 0.

    A constant-depth frame maps to 0.5 everywhere.
    """
    d = np.asarray(depth.values, dtype=np.float64)
    lo, hi = d.min(), d.max()
    if hi == lo:
        return SalienceMap(np.full(d.shape, 0.5))
    return SalienceMap(np.clip((hi - d) / (hi - lo), 0.0, 1.0))


# -- minimum barrier distance ------------------------------------------------

def _intensity(gray) -> np.ndarray:
    if isinstance(gray, RasterImage):
        if gray.channels != 1:
            raise ValueError("MBD needs a single-channel image; call to_grayscale first")
        return gray.pixels.astype(np.float64)
    arr = np.asarray(gray, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("MBD needs a 2-D intensity array")
    return arr


def border_seeds(shape) -> np.ndarray:
    """One-pixel border ring as a boolean mask."""
    seeds = np.zeros(shape, dtype=bool)
    seeds[0, :] = seeds[-1, :] = True
    seeds[:, 0] = seeds[:, -1] = True
    return seeds


def mbd_distance(gray, passes: int = DEFAULT_PASSES, seeds=None, backend=None) -> np.ndarray:
    """Raw raster-scan barrier distances ``U`` (unnormalized).

    Each pass pair is a forward sweep (upper/left neighbours) followed by a
    backward sweep (lower/right neighbours). Pixels unreachable from any
    seed stay ``inf``.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    img = _intensity(gray)
    seeds = border_seeds(img.shape) if seeds is None else np.asarray(seeds, dtype=bool)
    if seeds.shape != img.shape:
        raise ValueError("seed mask shape differs from image")
    return kernels.mbd_raster(img, seeds, passes, backend=backend)


def mbd_exact_distance(gray, seeds=None) -> np.ndarray:
    """Exact minimum barrier distance by sweeping the path minimum.

    For every candidate minimum ``m`` (each distinct intensity), pixels
    below ``m`` are removed and the smallest achievable path maximum from
    the seeds is found by a minimax fixpoint iteration; the distance is the
    minimum over ``m`` of (path maximum - ``m``).
    """
    img = _intensity(gray)
    h, w = img.shape
    if h > EXACT_SIZE_CAP or w > EXACT_SIZE_CAP:
        raise ValueError(f"exact MBD is capped at {EXACT_SIZE_CAP}x{EXACT_SIZE_CAP}")
    seeds = border_seeds(img.shape) if seeds is None else np.asarray(seeds, dtype=bool)
    levels = np.unique(img)
    allowed = img[None, :, :] >= levels[:, None, None]
    seed_ok = allowed & seeds[None, :, :]
    M = np.where(seed_ok, img[None, :, :], np.inf)
    padded = np.full((len(levels), h + 2, w + 2), np.inf)
    while True:
        padded[:, 1:-1, 1:-1] = M
        nb = np.minimum(
            np.minimum(padded[:, :-2, 1:-1], padded[:, 2:, 1:-1]),
            np.minimum(padded[:, 1:-1, :-2], padded[:, 1:-1, 2:]),
        )
        new = np.where(allowed, np.minimum(M, np.maximum(nb, img[None, :, :])), np.inf)
        if np.array_equal(new, M):
            break
        M = new
    return np.min(M - levels[:, None, None], axis=0)


def _unit_rescale(u: np.ndarray) -> np.ndarray:
    top = u.max()
    if top <= 0:
        return np.zeros_like(u)
    return np.clip(u / top, 0.0, 1.0)


def mbd_exact(gray, seeds=None) -> SalienceMap:
    u = mbd_exact_distance(gray, seeds)
    if not np.all(np.isfinite(u)):
        raise ValueError("some pixels are unreachable from the seeds")
    return SalienceMap(_unit_rescale(u))


def default_smooth_radius(dims) -> int:
    return max(1, math.ceil(min(dims) / 50))


def mbd_salience(gray, passes: int = DEFAULT_PASSES, smooth: bool = True,
                 center_bias: bool = True, smooth_radius: int | None = None,
                 sigma_c: float = DEFAULT_SIGMA_C, backend=None) -> SalienceMap:
    """MBD salience map with optional smoothing and center reweighting.

    Parameters
    ----------
    gray : RasterImage or 2-D array
        Single-channel intensities, at least 3x3.
    passes : int
        Number of forward/backward raster pass pairs.
    smooth : bool
        Box-blur the normalized distances with ``smooth_radius``
        (default ``ceil(min(w, h) / 50)``).
    center_bias : bool
        Multiply by an isotropic Gaussian at the image center with
        ``sigma = sigma_c * min(w, h)`` and renormalize.
    """
    img = _intensity(gray)
    h, w = img.shape
    if h < 3 or w < 3:
        raise ValueError("MBD salience needs an image of at least 3x3 pixels")
    s = _unit_rescale(mbd_distance(img, passes, backend=backend))
    if smooth:
        r = default_smooth_radius((w, h)) if smooth_radius is None else int(smooth_radius)
        if r > 0:
            s = ndimage.uniform_filter(s, size=2 * r + 1, mode="nearest")
    if center_bias:
        sigma = sigma_c * min(w, h)
        yy, xx = np.mgrid[0:h, 0:w]
        g = np.exp(-((xx - (w - 1) / 2.0) ** 2 + (yy - (h - 1) / 2.0) ** 2) / (2 * sigma**2))
        s = s * g
    return SalienceMap(_unit_rescale(s))
