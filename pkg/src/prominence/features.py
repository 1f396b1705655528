"""Keypoints, binary descriptors and their salience weights.

Detection is FAST-9 (segment test on the radius-3 Bresenham circle) and
description is BRIEF-256 on a 5x5 box-filtered image. No orientation or
scale assignment is done.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from prominence import kernels
from prominence.imagecore import RasterImage
from prominence.salience import SalienceMap

PATCH_SIZE = 31
PATCH_MARGIN = 16
N_BITS = 256
PATTERN_SIGMA = 6.5
DEFAULT_BRIEF_SEED = 20240917
MIN_FAST_KEYPOINTS = 10
FALLBACK_GRID_STRIDE = 24


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    response: float = 0.0


@dataclass(frozen=True)
class WeightedKeypoint:
    keypoint: Keypoint
    descriptor: np.ndarray  # (256,) bool
    weight: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight {self.weight} outside [0, 1]")
        if self.descriptor.shape != (N_BITS,):
            raise ValueError("descriptor must have exactly 256 bits")


def _gray_array(gray) -> np.ndarray:
    if isinstance(gray, RasterImage):
        if gray.channels != 1:
            raise ValueError("feature extraction needs a grayscale image")
        return np.asarray(gray.pixels)
    arr = np.asarray(gray)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D grayscale array")
    return arr


def _nms(resp: np.ndarray) -> np.ndarray:
    """3x3 non-maximum suppression; equal neighbours earlier in raster order win."""
    h, w = resp.shape
    pad = np.full((h + 2, w + 2), -1, dtype=resp.dtype)
    pad[1:-1, 1:-1] = resp
    keep = resp > 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = pad[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx]
            if (dy, dx) < (0, 0):
                keep &= resp > nb
            else:
                keep &= resp >= nb
    return keep


def detect_fast(gray, threshold: int = 20, max_keypoints: int = 500,
                margin: int = 3, backend=None) -> list[Keypoint]:
    """FAST-9 corners after 3x3 non-maximum suppression.

    ``margin`` keeps keypoints at least that many pixels from every border
    (never less than the circle radius 3). The strongest ``max_keypoints``
    are returned, ties broken by ``(y, x)``.
    """
    img = _gray_array(gray)
    if img.shape[0] < 7 or img.shape[1] < 7:
        raise ValueError("FAST needs an image of at least 7x7 pixels")
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    resp = kernels.fast_response(img, threshold, margin, backend=backend)
    ys, xs = np.nonzero(_nms(resp))
    r = resp[ys, xs]
    order = np.lexsort((xs, ys, -r))[:max_keypoints]
    return [Keypoint(int(xs[i]), int(ys[i]), float(r[i])) for i in order]


def dense_grid(gray, stride: int, margin: int = PATCH_MARGIN) -> list[Keypoint]:
    """Grid keypoints ``stride`` apart, starting at ``margin``, response 0."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    img = _gray_array(gray)
    h, w = img.shape
    ys = range(margin, h - margin, stride)
    xs = range(margin, w - margin, stride)
    return [Keypoint(x, y, 0.0) for y in ys for x in xs]


@lru_cache(maxsize=16)
def brief_pattern(seed: int = DEFAULT_BRIEF_SEED) -> np.ndarray:
    """Fixed ``(256, 4)`` array of ``(dy1, dx1, dy2, dx2)`` offsets.

    Offsets are drawn from an isotropic Gaussian and redrawn until they
    fall inside the 31x31 patch.
    """
    rng = np.random.default_rng(seed)
    half = PATCH_SIZE // 2
    out = np.empty((N_BITS, 4), dtype=np.int64)
    filled = 0
    while filled < N_BITS:
        cand = np.rint(rng.normal(0.0, PATTERN_SIGMA, size=(N_BITS, 4))).astype(np.int64)
        ok = np.all(np.abs(cand) <= half, axis=1)
        # identical endpoints give a constant bit
        ok &= np.any(cand[:, :2] != cand[:, 2:], axis=1)
        take = cand[ok][: N_BITS - filled]
        out[filled:filled + len(take)] = take
        filled += len(take)
    out.setflags(write=False)
    return out


def box_sum5(img: np.ndarray) -> np.ndarray:
    """5x5 box sums in exact integer arithmetic (a blur up to scale)."""
    return ndimage.correlate(img.astype(np.int64), np.ones((5, 5), dtype=np.int64),
                             mode="reflect")


def describe_brief(gray, kps: list[Keypoint], seed: int = DEFAULT_BRIEF_SEED) -> np.ndarray:
    """BRIEF-256 descriptors as an ``(n, 256)`` boolean array.

    Bit ``i`` is ``blur(p_i) < blur(q_i)``.
    """
    img = _gray_array(gray)
    h, w = img.shape
    if not kps:
        return np.zeros((0, N_BITS), dtype=bool)
    ys = np.array([k.y for k in kps])
    xs = np.array([k.x for k in kps])
    if (ys.min() < PATCH_MARGIN or xs.min() < PATCH_MARGIN
            or ys.max() > h - 1 - PATCH_MARGIN or xs.max() > w - 1 - PATCH_MARGIN):
        raise ValueError(f"keypoint closer than {PATCH_MARGIN} px to the border")
    blur = box_sum5(img)
    pat = brief_pattern(seed)
    a = blur[ys[:, None] + pat[None, :, 0], xs[:, None] + pat[None, :, 1]]
    b = blur[ys[:, None] + pat[None, :, 2], xs[:, None] + pat[None, :, 3]]
    return a < b


def hamming(d1: np.ndarray, d2: np.ndarray) -> int:
    return int(np.count_nonzero(np.asarray(d1, bool) != np.asarray(d2, bool)))


def attach_salience(kps: list[Keypoint], descriptors: np.ndarray,
                    smap: SalienceMap | None, dims: tuple[int, int] | None = None
                    ) -> list[WeightedKeypoint]:
    """Weight each keypoint by the salience at its pixel.

    With ``smap=None`` every weight is 1 (unweighted mode).
    """
    if smap is not None and dims is not None and tuple(dims) != smap.dims:
        raise ValueError(f"salience map {smap.dims} does not match image {tuple(dims)}")
    out = []
    for kp, desc in zip(kps, descriptors):
        weight = 1.0 if smap is None else float(smap.values[kp.y, kp.x])
        out.append(WeightedKeypoint(kp, np.asarray(desc, dtype=bool), weight))
    return out


def extract_features(gray, smap: SalienceMap | None = None, threshold: int = 20,
                     max_keypoints: int = 500, brief_seed: int = DEFAULT_BRIEF_SEED,
                     backend=None) -> list[WeightedKeypoint]:
    """Detect, describe and weight keypoints for one image.

    Falls back to adding a stride-24 dense grid when FAST finds fewer than
    10 corners, so textureless images still yield a document.
    """
    img = _gray_array(gray)
    kps = detect_fast(img, threshold, max_keypoints, margin=PATCH_MARGIN, backend=backend)
    if len(kps) < MIN_FAST_KEYPOINTS:
        seen = {(k.y, k.x) for k in kps}
        kps = kps + [k for k in dense_grid(img, FALLBACK_GRID_STRIDE) if (k.y, k.x) not in seen]
    desc = describe_brief(img, kps, brief_seed)
    return attach_salience(kps, desc, smap, dims=(img.shape[1], img.shape[0]))


def stack(features: list[WeightedKeypoint]) -> tuple[np.ndarray, np.ndarray]:
    """Descriptors as an ``(n, 256)`` float 0/1 matrix plus the weight vector."""
    if not features:
        return np.zeros((0, N_BITS)), np.zeros(0)
    X = np.array([f.descriptor for f in features], dtype=np.float64)
    w = np.array([f.weight for f in features], dtype=np.float64)
    return X, w


def keypoint_rows(image_id: str, features: list[WeightedKeypoint]):
    """CSV rows ``image_id,x,y,response,weight`` and hex descriptors."""
    rows, hexes = [], []
    for f in features:
        k = f.keypoint
        rows.append((image_id, k.x, k.y, repr(float(k.response)), repr(float(f.weight))))
        hexes.append(np.packbits(f.descriptor).tobytes().hex())
    return rows, hexes
