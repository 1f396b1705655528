"""Synthetic corpora with planted structure, for tests, fixtures and benchmarks.

``outlet_corpus`` builds news-style images whose outlets differ only in a
centered salient shape while sharing the same border clutter.
``campaign_videos`` builds annotated frame sequences in which faces of one
gender are pushed to the background in one party's ads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from prominence.imagecore import AnnotationSet, DepthMap, RasterImage, Region
from prominence.video import FrameSequence

# -- application 1: outlets --------------------------------------------------


def _clutter(rng, canvas, n_bars, min_len, max_len):
    """Bars of random intensity growing inward from a random image edge."""
    h, w = canvas.shape
    for _ in range(n_bars):
        thick = int(rng.integers(3, 8))
        length = int(rng.integers(min_len, max_len + 1))
        edge = int(rng.integers(4))
        along = int(rng.integers(0, (w if edge < 2 else h) - thick))
        value = rng.integers(0, 256)
        if edge == 0:
            canvas[:length, along:along + thick] = value
        elif edge == 1:
            canvas[h - length:, along:along + thick] = value
        elif edge == 2:
            canvas[along:along + thick, :length] = value
        else:
            canvas[along:along + thick, w - length:] = value


def _shape_mask(kind, size, rng):
    h = w = size
    c = size // 2
    half = int(rng.integers(7, 11))
    yy, xx = np.mgrid[0:h, 0:w]
    if kind in ("square", "dotted"):
        return (np.abs(yy - c) <= half) & (np.abs(xx - c) <= half)
    if kind == "diamond":
        return (np.abs(yy - c) + np.abs(xx - c)) <= half + 4
    if kind == "cross":
        arm = max(2, half // 3)
        return (((np.abs(yy - c) <= half) & (np.abs(xx - c) <= arm))
                | ((np.abs(xx - c) <= half) & (np.abs(yy - c) <= arm)))
    raise ValueError(kind)


def outlet_image(rng, shape: str, size: int = 96) -> RasterImage:
    """Mid-gray noisy canvas, border-attached clutter, one bright shape at
    the center (jittered a few pixels)."""
    canvas = np.clip(rng.normal(110, 6, size=(size, size)), 0, 255)
    _clutter(rng, canvas, int(rng.integers(10, 16)), int(size * 0.2), int(size * 0.36))
    mask = _shape_mask(shape, size, rng)
    dy, dx = rng.integers(-3, 4, size=2)
    mask = np.roll(mask, (int(dy), int(dx)), axis=(0, 1))
    canvas[mask] = rng.integers(215, 245)
    if shape == "dotted":
        # dark 2x2 dots on a 5 px lattice inside the square
        ys, xs = np.nonzero(mask)
        lattice = mask & ((np.arange(size)[:, None] - ys.min()) % 5 >= 3) \
            & ((np.arange(size)[None, :] - xs.min()) % 5 >= 3)
        canvas[lattice] -= 120
    return RasterImage(np.rint(canvas).astype(np.uint8))


@dataclass(frozen=True)
class CorpusItem:
    image_id: str
    outlet: str
    issue: str
    image: RasterImage


def outlet_corpus(seed: int, n_per_outlet: int = 12, size: int = 96,
                  shapes=("dotted", "cross")) -> list[CorpusItem]:
    """Two outlets, ``left`` and ``right``, with disjoint planted shapes
    (a dark-dotted square and a plain cross by default)."""
    rng = np.random.default_rng(seed)
    items = []
    for outlet, shape in zip(("left", "right"), shapes):
        for i in range(n_per_outlet):
            items.append(CorpusItem(f"{outlet}_{i:02d}", outlet, "climate",
                                    outlet_image(rng, shape, size)))
    return items


def write_outlet_corpus(root, seed: int, **kwargs) -> Path:
    """Write PNGs and ``metadata.csv`` (``image_id,path,outlet,issue``)."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    lines = ["image_id,path,outlet,issue"]
    for item in outlet_corpus(seed, **kwargs):
        rel = f"images/{item.image_id}.png"
        Image.fromarray(np.asarray(item.image.pixels)).save(root / rel)
        lines.append(f"{item.image_id},{rel},{item.outlet},{item.issue}")
    meta = root / "metadata.csv"
    meta.write_text("\n".join(lines) + "\n")
    return meta


# -- application 2: campaign videos ----------------------------------------

@dataclass
class SyntheticVideos:
    sequences: list[FrameSequence]
    annotations: dict[tuple[str, int], AnnotationSet]
    depths: dict[tuple[str, int], DepthMap]


def campaign_videos(seed: int, n_videos: int = 40, frames_per_video: int = 6,
                    n_candidates: int = 6, width: int = 64, height: int = 48,
                    depth_effect: float = 40.0, size_effect: float = -3.0,
                    include_female: bool = True, with_images: bool = False) -> SyntheticVideos:
    """Videos whose female faces sit deeper in Republican ads.

    ``depth_effect`` is added to the raw depth of female faces in ``rep``
    videos (larger depth = farther = lower depth position);
    ``size_effect`` changes their box side in pixels.
    """
    rng = np.random.default_rng(seed)
    sequences, annotations, depths = [], {}, {}
    for v in range(n_videos):
        vid = f"v{v:03d}"
        party = "dem" if v % 2 == 0 else "rep"
        cov = {
            "party": party,
            "candidate_id": f"c{(v // 2) % n_candidates}",
            "election_year": 2016 if (v // (2 * n_candidates)) % 2 == 0 else 2020,
            "candidate_visible": bool(rng.random() < 0.6),
        }
        indices = tuple(range(frames_per_video))
        images = []
        shade = int(rng.integers(20, 230))
        for fid in indices:
            if fid and rng.random() < 0.3:
                shade = int(rng.integers(20, 230))
            bg = 200.0 + rng.normal(0, 5, size=(height, width)) + np.linspace(0, 40, width)[None, :]
            regions = []
            for _ in range(int(rng.integers(1, 4))):
                female = include_female and rng.random() < 0.45
                side = int(np.clip(rng.normal(12, 2) + (size_effect if female and party == "rep"
                                                         else 0.0), 4, 20))
                x = int(rng.integers(0, width - side))
                y = int(rng.integers(0, height - side))
                d = rng.normal(90, 25) + (depth_effect if female and party == "rep" else 0.0)
                bg[y:y + side, x:x + side] = np.clip(d + rng.normal(0, 3, (side, side)), 1, 190)
                regions.append(Region(x, y, side, side, "face",
                                      {"gender": "female" if female else "male"}))
            annotations[(vid, fid)] = AnnotationSet(f"frame_{fid:05d}.png", width, height,
                                                    tuple(regions))
            depths[(vid, fid)] = DepthMap(np.rint(np.clip(bg, 0, 65535)))
            if with_images:
                img = np.full((height, width), shade, dtype=np.uint8)
                for r in regions:
                    img[r.y:r.y + r.h, r.x:r.x + r.w] = min(255, shade + 25)
                images.append(RasterImage(img))
        sequences.append(FrameSequence(vid, indices, (), cov, tuple(images)))
    return SyntheticVideos(sequences, annotations, depths)


def write_campaign_videos(root, seed: int, **kwargs) -> Path:
    """Write a frame-directory fixture readable by ``prominence video``."""
    root = Path(root)
    data = campaign_videos(seed, with_images=True, **kwargs)
    for seq in data.sequences:
        vdir = root / seq.video_id
        vdir.mkdir(parents=True, exist_ok=True)
        (vdir / "video.json").write_text(json.dumps(dict(seq.covariates), sort_keys=True))
        for pos, fid in enumerate(seq.indices):
            name = f"frame_{fid:05d}"
            Image.fromarray(np.asarray(seq.images[pos].pixels)).save(vdir / f"{name}.png")
            dm = data.depths[(seq.video_id, fid)]
            Image.fromarray(np.asarray(dm.values).astype(np.uint16)).save(vdir / f"{name}.depth.png")
            ann = data.annotations[(seq.video_id, fid)]
            doc = {"image": f"{name}.png", "regions": [
                {"x": r.x, "y": r.y, "w": r.w, "h": r.h, "label": r.label,
                 "covariates": dict(r.covariates)} for r in ann.regions]}
            (vdir / f"{name}.json").write_text(json.dumps(doc, sort_keys=True))
    return root
