"""Raster, depth and annotation inputs shared by every other module.

Images are held as read-only numpy arrays of shape ``(height, width)`` for
grayscale or ``(height, width, 3)`` for RGB, in row-major order.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

SUPPORTED_FORMATS = {"PNG", "PPM", "BMP"}

COVARIATE_SCHEMA: dict[str, Any] = {
    "gender": ("female", "male"),
    "party": ("dem", "rep"),
    "candidate_id": str,
    "election_year": int,
    "candidate_visible": bool,
}


class ImageLoadError(ValueError):
    """Raised when a raster cannot be read or fails validation."""


class AnnotationError(ValueError):
    """Raised for malformed annotation sidecars."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RasterImage:
    """An 8-bit image, 1 (gray) or 3 (RGB) channels."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            pass
        elif px.ndim == 3 and px.shape[2] in (1, 3):
            if px.shape[2] == 1:
                px = px[:, :, 0]
        else:
            raise ImageLoadError(f"unsupported pixel array shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageLoadError("zero-dimension image")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255) or not np.all(np.isfinite(px)):
                raise ImageLoadError("pixel values must lie in [0, 255]")
            if not np.array_equal(px, np.round(px)):
                raise ImageLoadError("pixel values must be integers")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    @property
    def dims(self) -> tuple[int, int]:
        """``(width, height)``."""
        return (self.width, self.height)

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the pixel values."""
        return self.pixels.reshape(-1)


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel relative depth; larger values are farther from the camera."""

    values: np.ndarray
    source_scale: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ImageLoadError(f"depth map must be a non-empty 2-D array, got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ImageLoadError("depth values must be finite and non-negative")
        object.__setattr__(self, "values", _frozen(v))

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


@dataclass(frozen=True)
class Region:
    """An annotated box ``(x, y, w, h)`` in pixel units, already clipped."""

    x: int
    y: int
    w: int
    h: int
    label: str = "object"
    covariates: Mapping[str, Any] = field(default_factory=dict)
    confidence: float = 1.0

    @property
    def box(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class AnnotationSet:
    image: str
    width: int
    height: int
    regions: tuple[Region, ...]
    rejected: int = 0


def clip_box(box, dims) -> tuple[int, int, int, int]:
    """Clip ``(x, y, w, h)`` to a ``(width, height)`` image rectangle.

    The result may have zero width or height when the box lies outside.
    """
    x, y, w, h = (int(v) for v in box)
    width, height = dims
    x0, y0 = min(max(x, 0), width), min(max(y, 0), height)
    x1, y1 = min(x + w, width), min(y + h, height)
    return (x0, y0, max(x1 - x0, 0), max(y1 - y0, 0))


def _read_netpbm_maxval(path) -> int | None:
    """Return the maxval of a binary/ASCII PGM or PPM header, else None."""
    with open(path, "rb") as fh:
        head = fh.read(512)
    if head[:2] not in (b"P2", b"P3", b"P5", b"P6"):
        return None
    tokens = []
    for line in head[2:].split(b"\n"):
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
        if len(tokens) >= 3:
            break
    try:
        return int(tokens[2])
    except (IndexError, ValueError):
        return None


def _open_raw(path) -> tuple[np.ndarray, int]:
    """Read a raster into an integer array plus the value scale's maximum."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ImageLoadError(f"unreadable file: {path} does not exist")
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in SUPPORTED_FORMATS:
                raise ImageLoadError(f"unsupported format {fmt!r} for {path}")
            im.load()
            mode = im.mode
            if mode in ("P", "PA", "RGBA", "CMYK", "YCbCr", "LA", "1"):
                im = im.convert("L" if mode in ("LA", "1") else "RGB")
                mode = im.mode
            arr = np.array(im)
    except ImageLoadError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageLoadError(f"unreadable file: {path} ({exc})") from exc

    if arr.size == 0:
        raise ImageLoadError(f"zero-dimension image: {path}")
    if mode in ("L", "RGB"):
        return arr.astype(np.int64), 255
    if mode.startswith("I"):
        arr = arr.astype(np.int64)
        maxval = _read_netpbm_maxval(path) if fmt == "PPM" else None
        if maxval is not None and maxval != 65535:
            # Pillow stretches netpbm samples to 16 bits; recover stored values
            arr = np.rint(arr * (maxval / 65535.0)).astype(np.int64)
            return arr, maxval
        return arr, 65535
    raise ImageLoadError(f"unsupported pixel mode {mode!r} for {path}")


def load_image(path) -> RasterImage:
    """Load a PNG, PGM/PPM or BMP file.

    Inputs deeper than 8 bits are rescaled linearly to 0..255.
    """
    arr, maxval = _open_raw(path)
    if maxval != 255:
        arr = np.floor(arr * (255.0 / maxval) + 0.5)
    return RasterImage(arr.astype(np.uint8))


def save_image(img: RasterImage, path) -> None:
    """Write ``img`` losslessly; format follows the file suffix."""
    Image.fromarray(np.asarray(img.pixels)).save(os.fspath(path))


def to_grayscale(img: RasterImage) -> RasterImage:
    """Rec.601 luma with round-half-up; gray input is returned unchanged."""
    if img.channels == 1:
        return img
    px = img.pixels.astype(np.int64)
    # integer form of round(0.299 R + 0.587 G + 0.114 B)
    luma = (299 * px[..., 0] + 587 * px[..., 1] + 114 * px[..., 2] + 500) // 1000
    return RasterImage(luma.astype(np.uint8))


def load_depth_map(path, dims: tuple[int, int] | None = None) -> DepthMap:
    """Load a 16-bit (or 8-bit) grayscale depth raster at native precision.

    Parameters
    ----------
    path : path-like
        ``.png`` or ``.pgm`` file; stored values are relative depth.
    dims : (width, height), optional
        Expected dimensions; a mismatch raises :class:`ImageLoadError`.
    """
    arr, _ = _open_raw(path)
    if arr.ndim != 2:
        raise ImageLoadError(f"depth map must be single-channel grayscale: {path}")
    if dims is not None and (arr.shape[1], arr.shape[0]) != tuple(dims):
        raise ImageLoadError(
            f"depth map dimension mismatch: got {arr.shape[1]}x{arr.shape[0]}, "
            f"expected {dims[0]}x{dims[1]}"
        )
    return DepthMap(arr.astype(np.float64))


def save_depth_map(depth: DepthMap, path) -> None:
    vals = np.asarray(depth.values)
    if np.any(vals > 65535) or not np.array_equal(vals, np.round(vals)):
        raise ValueError("only integer depths in 0..65535 can be stored losslessly")
    Image.fromarray(vals.astype(np.uint16)).save(os.fspath(path))


def depth_path_for(image_path) -> Path | None:
    """Locate the ``.depth.png``/``.depth.pgm`` sibling of an image, if any."""
    p = Path(image_path)
    stem = p.name[: -len(p.suffix)] if p.suffix else p.name
    for suffix in (".depth.png", ".depth.pgm"):
        cand = p.with_name(stem + suffix)
        if cand.exists():
            return cand
    return None


def validate_covariates(cov: Mapping[str, Any]) -> dict[str, Any]:
    out = {}
    for key, value in cov.items():
        if key not in COVARIATE_SCHEMA:
            raise AnnotationError(f"unknown covariate key {key!r}")
        rule = COVARIATE_SCHEMA[key]
        if isinstance(rule, tuple):
            if value not in rule:
                raise AnnotationError(f"covariate {key}={value!r} not in {rule}")
        elif rule is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise AnnotationError(f"covariate {key} must be an integer")
        elif rule is bool:
            if not isinstance(value, bool):
                raise AnnotationError(f"covariate {key} must be a boolean")
        elif not isinstance(value, rule):
            raise AnnotationError(f"covariate {key} must be {rule.__name__}")
        out[key] = value
    return out


def parse_annotations(doc: Mapping[str, Any], dims: tuple[int, int]) -> AnnotationSet:
    """Validate an already-decoded sidecar against ``(width, height)``."""
    if not isinstance(doc, Mapping) or "regions" not in doc:
        raise AnnotationError("annotation sidecar must be an object with 'regions'")
    regions = []
    rejected = 0
    for i, rec in enumerate(doc["regions"]):
        try:
            box = [rec[k] for k in ("x", "y", "w", "h")]
        except (KeyError, TypeError) as exc:
            raise AnnotationError(f"region {i} lacks x/y/w/h") from exc
        if any(isinstance(v, bool) or not isinstance(v, int) for v in box):
            raise AnnotationError(f"region {i} box values must be integers")
        if box[2] < 0 or box[3] < 0:
            raise AnnotationError(f"region {i} has negative box extents")
        cov = validate_covariates(rec.get("covariates") or {})
        x, y, w, h = clip_box(box, dims)
        if w == 0 or h == 0:
            rejected += 1
            continue
        regions.append(
            Region(x, y, w, h, label=str(rec.get("label", "object")), covariates=cov,
                   confidence=float(rec.get("confidence", 1.0)))
        )
    if rejected:
        log.warning("%d annotation record(s) rejected: empty after clipping", rejected)
    return AnnotationSet(
        image=str(doc.get("image", "")), width=dims[0], height=dims[1],
        regions=tuple(regions), rejected=rejected,
    )


def load_annotations(path, dims: tuple[int, int] | None = None) -> AnnotationSet:
    """Read a JSON annotation sidecar and clip its boxes to the image.

    When ``dims`` is omitted the image named in the sidecar (relative to the
    sidecar's directory) is opened to obtain its size.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed JSON in {path}: {exc}") from exc
    if dims is None:
        if not isinstance(doc, Mapping) or "image" not in doc:
            raise AnnotationError(f"{path}: 'image' is required when dims are not given")
        img_path = path.parent / doc["image"]
        try:
            with Image.open(img_path) as im:
                dims = im.size
        except (OSError, UnidentifiedImageError) as exc:
            raise AnnotationError(f"cannot read image size from {img_path}") from exc
    return parse_annotations(doc, tuple(dims))
