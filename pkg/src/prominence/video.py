"""Scene keyframes and per-face prominence observations from frame sequences.

Videos arrive as directories of numbered frames (``frame_<index>.png``)
with optional depth rasters and annotation sidecars next to each frame.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from prominence.imagecore import (
    AnnotationSet,
    DepthMap,
    ImageLoadError,
    RasterImage,
    clip_box,
    depth_path_for,
    load_depth_map,
    load_image,
    to_grayscale,
    validate_covariates,
)
from prominence.salience import EmptyRegionError, depth_salience, region_mask

log = logging.getLogger(__name__)

DEFAULT_TAU = 30.0
FRAME_RE = re.compile(r"^frame_(\d+)\.png$")
OBSERVATION_COLUMNS = [
    "video_id", "frame_id", "x", "y", "w", "h", "gender", "party", "candidate_id",
    "election_year", "candidate_visible", "depth_position", "relative_size",
]
REQUIRED_COVARIATES = ("gender", "party", "candidate_id", "election_year", "candidate_visible")


@dataclass(frozen=True)
class FrameSequence:
    video_id: str
    indices: tuple[int, ...]
    paths: tuple[Path, ...] = ()
    covariates: Mapping[str, Any] = field(default_factory=dict)
    images: tuple[RasterImage, ...] = ()

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError(f"{self.video_id}: frame indices must be strictly increasing")
        if not self.indices:
            raise ValueError(f"{self.video_id}: no frames")

    def __len__(self):
        return len(self.indices)

    def frame(self, pos: int) -> RasterImage:
        if self.images:
            return self.images[pos]
        if self.paths:
            return load_image(self.paths[pos])
        raise ValueError(f"{self.video_id}: frames were not loaded")


@dataclass(frozen=True)
class Scene:
    start: int
    end: int
    keyframe: int


@dataclass(frozen=True)
class FaceObservation:
    video_id: str
    frame_id: int
    box: tuple[int, int, int, int]
    gender: str
    party: str
    candidate_id: str
    election_year: int
    candidate_visible: bool
    depth_position: float
    relative_size: float

    def row(self) -> dict[str, Any]:
        x, y, w, h = self.box
        return {
            "video_id": self.video_id, "frame_id": self.frame_id, "x": x, "y": y, "w": w,
            "h": h, "gender": self.gender, "party": self.party,
            "candidate_id": self.candidate_id, "election_year": self.election_year,
            "candidate_visible": self.candidate_visible,
            "depth_position": self.depth_position, "relative_size": self.relative_size,
        }


@dataclass
class ObservationTable:
    rows: list[FaceObservation]
    excluded: int = 0

    def __len__(self):
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.row() for r in self.rows], columns=OBSERVATION_COLUMNS)

    def to_csv(self) -> str:
        lines = [",".join(OBSERVATION_COLUMNS)]
        for r in self.rows:
            d = r.row()
            d["candidate_visible"] = "true" if d["candidate_visible"] else "false"
            d["depth_position"] = repr(float(d["depth_position"]))
            d["relative_size"] = repr(float(d["relative_size"]))
            lines.append(",".join(str(d[c]) for c in OBSERVATION_COLUMNS))
        return "\n".join(lines) + "\n"


def read_observations_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"video_id": str, "candidate_id": str}, float_precision="round_trip")
    missing = [c for c in OBSERVATION_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"observation table lacks columns: {', '.join(missing)}")
    df["candidate_visible"] = df["candidate_visible"].map(
        lambda v: str(v).strip().lower() in ("true", "1"))
    return df


def load_frame_sequence(directory, video_id: str | None = None) -> FrameSequence:
    """Collect ``frame_<index>.png`` files and an optional ``video.json``
    holding per-video covariates."""
    directory = Path(directory)
    found = []
    for p in directory.iterdir():
        m = FRAME_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    if not found:
        raise ValueError(f"no frame_<index>.png files in {directory}")
    found.sort()
    cov = {}
    meta = directory / "video.json"
    if meta.exists():
        cov = validate_covariates(json.loads(meta.read_text()))
    return FrameSequence(video_id or directory.name, tuple(i for i, _ in found),
                         tuple(p for _, p in found), cov)


def mean_abs_difference(a: RasterImage, b: RasterImage) -> float:
    ga = to_grayscale(a).pixels.astype(np.float64)
    gb = to_grayscale(b).pixels.astype(np.float64)
    if ga.shape != gb.shape:
        raise ValueError(f"frame dimension mismatch: {ga.shape} vs {gb.shape}")
    return float(np.abs(ga - gb).mean())


def detect_scenes(frames, tau: float = DEFAULT_TAU) -> list[Scene]:
    """Split a sequence where the mean absolute gray-level difference between
    consecutive frames exceeds ``tau``; each scene's first frame is its
    keyframe. Scene bounds are frame indices."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if isinstance(frames, FrameSequence):
        indices = list(frames.indices)
        get = frames.frame
    else:
        frames = list(frames)
        indices = list(range(len(frames)))
        get = frames.__getitem__
    if not indices:
        raise ValueError("need at least one frame")
    starts = [0]
    prev = get(0)
    for pos in range(1, len(indices)):
        cur = get(pos)
        if mean_abs_difference(prev, cur) > tau:
            starts.append(pos)
        prev = cur
    bounds = starts + [len(indices)]
    return [Scene(indices[s], indices[e - 1], indices[s]) for s, e in zip(bounds, bounds[1:])]


def face_depth_position(depth: DepthMap | None, box) -> float:
    """Mean inverted frame-normalized depth over the clipped box."""
    if depth is None:
        raise ValueError("missing depth map")
    sal = depth_salience(depth)
    mask = region_mask(box, depth.dims)
    return float(min(max(sal.values[mask].mean(), 0.0), 1.0))


def face_relative_size(box, dims: tuple[int, int]) -> float:
    x, y, w, h = clip_box(box, dims)
    if w == 0 or h == 0:
        raise EmptyRegionError("box is empty after clipping")
    return (w * h) / (dims[0] * dims[1])


DepthSource = Callable[[str, int], "DepthMap | None"]


def _depth_lookup(depths) -> DepthSource:
    if depths is None:
        return lambda vid, fid: None
    if callable(depths):
        return depths
    return lambda vid, fid: depths.get((vid, fid))


def build_observation_table(sequences: Sequence[FrameSequence],
                            annotations: Mapping[tuple[str, int], AnnotationSet],
                            depths=None, keyframes: Mapping[str, Sequence[int]] | None = None
                            ) -> ObservationTable:
    """One row per annotated face, ordered by (video, frame, box order).

    Parameters
    ----------
    annotations : mapping ``(video_id, frame_id) -> AnnotationSet``
    depths : mapping ``(video_id, frame_id) -> DepthMap`` or callable
        Faces on frames without a depth map are excluded and counted.
    keyframes : mapping ``video_id -> frame ids``, optional
        Restrict measurement to these frames (scene keyframes).
    """
    lookup = _depth_lookup(depths)
    rows: list[FaceObservation] = []
    excluded = 0
    for seq in sorted(sequences, key=lambda s: s.video_id):
        allowed = None if keyframes is None else set(keyframes.get(seq.video_id, ()))
        for fid in seq.indices:
            if allowed is not None and fid not in allowed:
                continue
            ann = annotations.get((seq.video_id, fid))
            if ann is None or not ann.regions:
                continue
            dims = (ann.width, ann.height)
            depth = lookup(seq.video_id, fid)
            if depth is not None and depth.dims != dims:
                raise ImageLoadError(f"{seq.video_id}/{fid}: depth map size differs from frame")
            for region in ann.regions:
                cov = {**seq.covariates, **region.covariates}
                missing = [c for c in REQUIRED_COVARIATES if c not in cov]
                if missing:
                    raise ValueError(
                        f"{seq.video_id}/{fid}: missing covariates {', '.join(missing)}")
                validate_covariates(cov)
                if depth is None:
                    excluded += 1
                    continue
                rows.append(FaceObservation(
                    seq.video_id, fid, region.box, cov["gender"], cov["party"],
                    str(cov["candidate_id"]), int(cov["election_year"]),
                    bool(cov["candidate_visible"]),
                    face_depth_position(depth, region.box),
                    face_relative_size(region.box, dims),
                ))
    if excluded:
        log.warning("%d face(s) excluded for missing depth maps", excluded)
    return ObservationTable(rows, excluded)


def frame_depth_source(sequence: FrameSequence) -> DepthSource:
    """Depth loader looking for ``frame_<i>.depth.png|pgm`` beside each frame."""
    by_id = dict(zip(sequence.indices, sequence.paths))

    def load(video_id: str, frame_id: int):
        p = by_id.get(frame_id)
        dp = depth_path_for(p) if p is not None else None
        return load_depth_map(dp) if dp is not None else None

    return load
