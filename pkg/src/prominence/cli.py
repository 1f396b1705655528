"""Command-line pipeline: ``prominence {salience,scale,video,regress}``.

Every subcommand accepts ``--config`` (JSON whose keys are
:class:`PipelineConfig` fields), ``--seed``, ``--jobs`` and ``--out``;
explicit flags override the config file. Each run writes a
``manifest.json`` listing the files it produced with their SHA-256.

Exit codes: 0 success, 2 partial failure (some files or models failed),
1 hard error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from prominence import features, salience, scaling, stats, vbow, video
from prominence.imagecore import (
    depth_path_for,
    load_annotations,
    load_depth_map,
    load_image,
    to_grayscale,
)

log = logging.getLogger("prominence")

IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".bmp"}
METADATA_COLUMNS = ("image_id", "path", "outlet", "issue")
SALIENCE_METHODS = ("mbd", "depth", "size_centeredness")
SCENARIOS = {
    # name: (weight clustering, weight counts)
    "default_vbow": (False, False),
    "cluster_weighted": (True, False),
    "count_weighted": (False, True),
    "salience_vbow": (True, True),
}
MODEL_NAMES = {"depth_position": "Depth Model", "relative_size": "Face Size Model"}


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # inputs
    images: str | None = None
    annotations: str | None = None
    depth: str | None = None
    metadata: str | None = None
    dtm: str | None = None
    frames: str | None = None
    observations: str | None = None
    # salience
    salience_method: str = "mbd"
    mbd_passes: int = salience.DEFAULT_PASSES
    mbd_smooth: bool = True
    mbd_center_bias: bool = True
    mbd_sigma_c: float = salience.DEFAULT_SIGMA_C
    keypoint_weights: str = "postprocessed"  # or "raw"
    aggregate: str = "mean"
    # features
    fast_threshold: int = 20
    max_keypoints: int = 500
    brief_seed: int = features.DEFAULT_BRIEF_SEED
    # vbow
    k: int = vbow.DEFAULT_K
    kmeans_iters: int = 100
    weight_clustering: bool = True
    weight_counts: bool = True
    scenarios: str = "single"
    group_by: str = "outlet"
    issue: str | None = None
    # wordfish
    wordfish_tol: float = scaling.DEFAULT_TOL
    wordfish_max_iters: int = scaling.DEFAULT_MAX_ITERS
    orientation: list[str] | None = None
    bootstrap: int = 0
    # video
    tau: float = video.DEFAULT_TAU
    scenes: bool = True
    # run
    out: str = "out"
    seed: int = 0
    jobs: int = 1

    def validate(self, command: str) -> None:
        if self.salience_method not in SALIENCE_METHODS:
            raise ConfigError(f"salience_method must be one of {SALIENCE_METHODS}")
        if self.keypoint_weights not in ("postprocessed", "raw"):
            raise ConfigError("keypoint_weights must be 'postprocessed' or 'raw'")
        if self.aggregate not in ("mean", "max"):
            raise ConfigError("aggregate must be 'mean' or 'max'")
        if self.scenarios not in ("single", "all"):
            raise ConfigError("scenarios must be 'single' or 'all'")
        checks = [
            (self.mbd_passes >= 1, "mbd_passes must be >= 1"),
            (self.mbd_sigma_c > 0, "mbd_sigma_c must be > 0"),
            (self.fast_threshold >= 1, "fast_threshold must be >= 1"),
            (self.max_keypoints >= 1, "max_keypoints must be >= 1"),
            (self.k >= 2, "k must be >= 2"),
            (self.kmeans_iters >= 1, "kmeans_iters must be >= 1"),
            (self.wordfish_tol > 0, "wordfish_tol must be > 0"),
            (self.wordfish_max_iters >= 1, "wordfish_max_iters must be >= 1"),
            (self.bootstrap >= 0, "bootstrap must be >= 0"),
            (self.tau >= 0, "tau must be >= 0"),
            (self.jobs >= 1, "jobs must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.orientation is not None and len(self.orientation) != 2:
            raise ConfigError("orientation needs exactly two document ids")
        required = {"salience": ["images"], "video": ["frames"], "regress": ["observations"]}
        for key in required.get(command, []):
            if getattr(self, key) is None:
                raise ConfigError(f"--{key} is required for '{command}'")
        if command == "scale" and self.metadata is None and self.dtm is None:
            raise ConfigError("'scale' needs --metadata or --dtm")
        for key in ("images", "annotations", "depth", "metadata", "dtm", "frames", "observations"):
            val = getattr(self, key)
            if val is not None and not Path(val).exists():
                raise ConfigError(f"{key} path does not exist: {val}")


def load_config(path: str | None, overrides: dict[str, Any]) -> PipelineConfig:
    values: dict[str, Any] = {}
    if path:
        doc = json.loads(Path(path).read_text())
        names = {f.name for f in dataclasses.fields(PipelineConfig)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values.update(doc)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


def derive_seed(seed: int, stage: str) -> int:
    """Stable per-stage seed from the global seed."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


class RunOutput:
    """Writes files under the output directory and records the manifest."""

    def __init__(self, root, command: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.entries: list[dict[str, str]] = []

    def write_bytes(self, rel: str, data: bytes) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.entries.append({"path": rel, "sha256": hashlib.sha256(data).hexdigest(),
                             "command": self.command})
        return path

    def write_text(self, rel: str, text: str) -> Path:
        return self.write_bytes(rel, text.encode())

    def write_png(self, rel: str, arr: np.ndarray) -> Path:
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(arr).save(buf, format="PNG")
        return self.write_bytes(rel, buf.getvalue())

    def finish(self) -> None:
        entries = sorted(self.entries, key=lambda e: e["path"])
        (self.root / "manifest.json").write_text(json.dumps({"files": entries}, indent=1) + "\n")


def _pmap(func: Callable, items: Sequence, jobs: int) -> list:
    """Ordered map, optionally over a process pool."""
    if jobs <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def _config_json(cfg: PipelineConfig) -> str:
    # out and jobs do not affect results; leaving them out keeps runs comparable
    doc = {k: v for k, v in dataclasses.asdict(cfg).items() if k not in ("out", "jobs")}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


# -- salience ----------------------------------------------------------------

def _compute_map(cfg: PipelineConfig, gray, image_path: Path | None, depth_dir: str | None):
    if cfg.salience_method == "mbd":
        return salience.mbd_salience(gray, cfg.mbd_passes, cfg.mbd_smooth, cfg.mbd_center_bias,
                                     sigma_c=cfg.mbd_sigma_c)
    if cfg.salience_method == "size_centeredness":
        return salience.centeredness_map(gray.dims)
    dpath = None
    if depth_dir is not None and image_path is not None:
        stem = image_path.name[: -len(image_path.suffix)]
        for suffix in (".depth.png", ".depth.pgm"):
            cand = Path(depth_dir) / (stem + suffix)
            if cand.exists():
                dpath = cand
                break
    elif image_path is not None:
        dpath = depth_path_for(image_path)
    if dpath is None:
        raise FileNotFoundError(f"no depth map for {image_path}")
    return salience.depth_salience(load_depth_map(dpath, gray.dims))


def _salience_task(args):
    cfg, path = args
    path = Path(path)
    stem = path.name[: -len(path.suffix)]
    try:
        gray = to_grayscale(load_image(path))
        smap = _compute_map(cfg, gray, path, cfg.depth)
        rows = []
        if cfg.annotations is not None:
            sidecar = Path(cfg.annotations) / f"{stem}.json"
            if sidecar.exists():
                ann = load_annotations(sidecar, dims=gray.dims)
                mode = "max" if cfg.salience_method == "size_centeredness" else cfg.aggregate
                for i, region in enumerate(ann.regions):
                    sc = salience.score_region(smap, region, i, mode)
                    rows.append([stem, i, region.label, *region.box, repr(sc.size_fraction),
                                 repr(sc.centeredness), repr(sc.salience_aggregate),
                                 repr(sc.detection_confidence), repr(sc.prominence)])
        return stem, smap.to_uint8(), rows, None
    except Exception as exc:  # reported per file
        return stem, None, [], f"{path}: {exc}"


def _list_images(root) -> list[Path]:
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(p for p in root.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES and ".depth." not in p.name)


def cmd_salience(cfg: PipelineConfig) -> int:
    run = RunOutput(cfg.out, "salience")
    paths = _list_images(cfg.images)
    if not paths:
        raise ConfigError(f"no images found in {cfg.images}")
    results = _pmap(_salience_task, [(cfg, str(p)) for p in paths], cfg.jobs)
    errors = []
    all_rows = []
    for stem, arr, rows, err in results:
        if err:
            errors.append(err)
            continue
        run.write_png(f"maps/{stem}.png", arr)
        all_rows.extend(rows)
    if cfg.annotations is not None:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["image_id", "region_id", "label", "x", "y", "w", "h", "size_fraction",
                     "centeredness", "salience_aggregate", "detection_confidence", "prominence"])
        wr.writerows(all_rows)
        run.write_text("region_scores.csv", buf.getvalue())
    run.write_text("config.json", _config_json(cfg))
    if errors:
        run.write_text("errors.txt", "\n".join(errors) + "\n")
    run.finish()
    for e in errors:
        log.error(e)
    return 2 if errors else 0


# -- scale -----------------------------------------------------------------

def read_metadata(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for c in METADATA_COLUMNS:
            if c not in cols:
                raise ConfigError(f"metadata CSV is missing column '{c}'")
        rows = [dict(r) for r in reader]
    base = Path(path).parent
    for r in rows:
        p = Path(r["path"])
        r["path"] = str(p if p.is_absolute() else base / p)
    return sorted(rows, key=lambda r: r["image_id"])


def _feature_task(args):
    cfg, image_id, path = args
    try:
        gray = to_grayscale(load_image(path))
        if cfg.keypoint_weights == "raw":
            smap = salience.mbd_salience(gray, cfg.mbd_passes, smooth=False, center_bias=False)
        else:
            smap = _compute_map(cfg, gray, Path(path), cfg.depth)
        feats = features.extract_features(gray, smap, cfg.fast_threshold, cfg.max_keypoints,
                                          cfg.brief_seed)
        return image_id, feats, None
    except Exception as exc:
        return image_id, None, f"{path}: {exc}"


def _run_wordfish(run: RunOutput, prefix: str, dtm: vbow.DocumentTermMatrix,
                  cfg: PipelineConfig) -> scaling.WordfishFit:
    dtm, _ = dtm.drop_empty_terms()
    ori = cfg.orientation or [dtm.doc_ids[0], dtm.doc_ids[-1]]
    fit = scaling.fit_wordfish(dtm, cfg.wordfish_tol, cfg.wordfish_max_iters,
                               derive_seed(cfg.seed, "wordfish"), ori)
    intervals = None
    if cfg.bootstrap > 0:
        if fit.converged:
            intervals = scaling.bootstrap_ci(dtm, fit, cfg.bootstrap,
                                             derive_seed(cfg.seed, "bootstrap"))
        else:
            log.warning("%s: skipping bootstrap for an unconverged fit", prefix or "wordfish")
    run.write_text(f"{prefix}wordfish.json", fit.to_json() + "\n")
    run.write_text(f"{prefix}idealpoints.csv", scaling.idealpoint_csv(fit, intervals))
    return fit


def cmd_scale(cfg: PipelineConfig) -> int:
    run = RunOutput(cfg.out, "scale")
    run.write_text("config.json", _config_json(cfg))
    if cfg.dtm is not None:
        dtm = vbow.DocumentTermMatrix.from_csv(Path(cfg.dtm).read_text(),
                                               group_cols=("outlet", "issue"))
        _run_wordfish(run, "", dtm, cfg)
        run.finish()
        return 0

    rows = read_metadata(cfg.metadata)
    if cfg.issue is not None:
        rows = [r for r in rows if r["issue"] == cfg.issue]
    if not rows:
        raise ConfigError("no images selected from the metadata")
    if cfg.group_by not in rows[0]:
        raise ConfigError(f"metadata CSV is missing column '{cfg.group_by}'")
    results = _pmap(_feature_task, [(cfg, r["image_id"], r["path"]) for r in rows], cfg.jobs)
    errors = [err for _, _, err in results if err]
    good = [(r, feats) for r, (_, feats, err) in zip(rows, results) if not err]
    if not good:
        raise RuntimeError("feature extraction failed for every image")

    kp_rows, hexes = [], []
    for r, feats in good:
        a, b = features.keypoint_rows(r["image_id"], feats)
        kp_rows.extend(a)
        hexes.extend(b)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["image_id", "x", "y", "response", "weight"])
    wr.writerows(kp_rows)
    run.write_text("keypoints.csv", buf.getvalue())
    run.write_text("descriptors.hex", "".join(h + "\n" for h in hexes))

    if cfg.scenarios == "all":
        plan = [(f"{name}/", wc, wt) for name, (wc, wt) in SCENARIOS.items()]
    else:
        plan = [("", cfg.weight_clustering, cfg.weight_counts)]
    unconverged = []
    for prefix, w_cluster, w_count in plan:
        vocab = vbow.build_vocabulary([f for _, f in good], cfg.k, cfg.kmeans_iters,
                                      derive_seed(cfg.seed, "kmeans"), weighted=w_cluster,
                                      weighted_counts=w_count, brief_seed=cfg.brief_seed)
        run.write_text(f"{prefix}vocabulary.json", vocab.to_json() + "\n")
        docs = []
        for r, feats in good:
            vec = vbow.quantize(feats, vocab, weighted=w_count)
            meta = {"image_id": r["image_id"], "outlet": r["outlet"], "issue": r["issue"],
                    cfg.group_by: r[cfg.group_by]}
            docs.append((meta, vec))
        dtm = vbow.aggregate_documents(docs, cfg.group_by)
        run.write_text(f"{prefix}dtm.csv", dtm.to_csv())
        fit = _run_wordfish(run, prefix, dtm, cfg)
        if not fit.converged:
            unconverged.append(prefix or "wordfish")
    if errors:
        run.write_text("errors.txt", "\n".join(errors) + "\n")
    run.finish()
    for e in errors:
        log.error(e)
    for name in unconverged:
        log.warning("%s: wordfish reached max_iters without converging", name)
    return 2 if errors else 0


# -- video / regress ------------------------------------------------------------

def _video_task(args):
    cfg, vdir = args
    vdir = Path(vdir)
    try:
        seq = video.load_frame_sequence(vdir)
        scenes = video.detect_scenes(seq, cfg.tau) if cfg.scenes else []
        annotations = {}
        for fid, path in zip(seq.indices, seq.paths):
            sidecar = path.with_suffix(".json")
            if sidecar.exists():
                frame = load_image(path)
                annotations[(seq.video_id, fid)] = load_annotations(sidecar, dims=frame.dims)
        keyframes = {seq.video_id: [s.keyframe for s in scenes]} if cfg.scenes else None
        table = video.build_observation_table([seq], annotations, video.frame_depth_source(seq),
                                              keyframes)
        return seq.video_id, scenes, table, None
    except Exception as exc:
        return vdir.name, [], None, f"{vdir}: {exc}"


def _regressions(run: RunOutput, table) -> int:
    results = {}
    problems = []
    for outcome, name in MODEL_NAMES.items():
        try:
            results[name] = stats.fit_fe_ols(table, stats.ModelSpec(outcome=outcome))
        except stats.RankDeficiencyError as exc:
            problems.append(f"{name}: {exc}")
        except ValueError as exc:
            problems.append(f"{name}: {exc}")
    text = stats.report_table(results) if results else ""
    if problems:
        text += "".join(f"\n{p}" for p in problems) + "\n"
    run.write_text("regression_table.txt", text)
    if results:
        run.write_text("regression_table.csv", stats.report_csv(results))
        run.write_text("interaction_plot.csv", stats.interaction_plot_csv(results))
        summary = {
            name: {
                "terms": res.terms, "estimates": res.estimates.tolist(),
                "se": res.se.tolist(), "pvalues": res.pvalues.tolist(), "nobs": res.nobs,
                "groups": res.groups, "deviance": res.deviance, "loglik": res.loglik,
                "pseudo_r2": res.pseudo_r2, "n_clusters": res.n_clusters,
                "n_excluded": res.n_excluded,
            } for name, res in results.items()
        }
        summary["problems"] = problems
        run.write_text("regression.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    for p in problems:
        log.error(p)
    return 2 if problems else 0


def cmd_video(cfg: PipelineConfig) -> int:
    run = RunOutput(cfg.out, "video")
    run.write_text("config.json", _config_json(cfg))
    vdirs = sorted(p for p in Path(cfg.frames).iterdir() if p.is_dir())
    if not vdirs:
        raise ConfigError(f"no video directories in {cfg.frames}")
    results = _pmap(_video_task, [(cfg, str(v)) for v in vdirs], cfg.jobs)
    errors = [err for *_, err in results if err]
    scene_lines = ["video_id,scene,start,end,keyframe"]
    merged = video.ObservationTable([], 0)
    for vid, scenes, table, err in results:
        if err:
            continue
        for i, s in enumerate(scenes):
            scene_lines.append(f"{vid},{i},{s.start},{s.end},{s.keyframe}")
        merged.rows.extend(table.rows)
        merged.excluded += table.excluded
    run.write_text("scenes.csv", "\n".join(scene_lines) + "\n")
    run.write_text("observations.csv", merged.to_csv())
    run.write_text("exclusions.json", json.dumps({"excluded_faces": merged.excluded}) + "\n")
    status = _regressions(run, merged) if merged.rows else 2
    if errors:
        run.write_text("errors.txt", "\n".join(errors) + "\n")
    run.finish()
    for e in errors:
        log.error(e)
    return 2 if errors or status else 0


def cmd_regress(cfg: PipelineConfig) -> int:
    run = RunOutput(cfg.out, "regress")
    run.write_text("config.json", _config_json(cfg))
    table = video.read_observations_csv(cfg.observations)
    status = _regressions(run, table)
    run.finish()
    return status


COMMANDS = {"salience": cmd_salience, "scale": cmd_scale, "video": cmd_video,
            "regress": cmd_regress}


def _bool_flag(parser, name: str, help: str):
    dest = name.replace("-", "_")
    parser.add_argument(f"--{name}", dest=dest, action="store_true", default=None, help=help)
    parser.add_argument(f"--no-{name}", dest=dest, action="store_false")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="prominence", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sal = sub.add_parser("salience", parents=[common], help="salience maps and region scores")
    sal.add_argument("--images", help="image file or directory")
    sal.add_argument("--annotations", help="directory of <image stem>.json sidecars")
    sal.add_argument("--depth", help="directory of <stem>.depth.png maps (default: beside images)")
    sal.add_argument("--method", dest="salience_method", choices=SALIENCE_METHODS)
    sal.add_argument("--passes", dest="mbd_passes", type=int)
    _bool_flag(sal, "mbd-smooth", "box-blur MBD maps")
    _bool_flag(sal, "mbd-center-bias", "center Gaussian reweighting of MBD maps")
    sal.add_argument("--aggregate", choices=("mean", "max"))

    sc = sub.add_parser("scale", parents=[common], help="VBoW + Wordfish idealpoints")
    sc.add_argument("--metadata", help="CSV with image_id,path,outlet,issue")
    sc.add_argument("--dtm", help="scale an existing document-term CSV instead")
    sc.add_argument("--k", type=int)
    sc.add_argument("--iters", dest="kmeans_iters", type=int)
    sc.add_argument("--fast-threshold", type=int)
    sc.add_argument("--max-keypoints", type=int)
    sc.add_argument("--brief-seed", type=int)
    sc.add_argument("--keypoint-weights", choices=("postprocessed", "raw"))
    _bool_flag(sc, "weight-clustering", "salience-weight k-means")
    _bool_flag(sc, "weight-counts", "salience-weight word counts")
    sc.add_argument("--scenarios", choices=("single", "all"))
    sc.add_argument("--group-by")
    sc.add_argument("--issue")
    sc.add_argument("--orientation", nargs=2, metavar=("LEFT", "RIGHT"))
    sc.add_argument("--tol", dest="wordfish_tol", type=float)
    sc.add_argument("--max-iters", dest="wordfish_max_iters", type=int)
    sc.add_argument("--bootstrap", type=int)

    vid = sub.add_parser("video", parents=[common], help="scene keyframes, face prominence, models")
    vid.add_argument("--frames", help="directory with one sub-directory per video")
    vid.add_argument("--tau", type=float)
    _bool_flag(vid, "scenes", "measure scene keyframes only")

    reg = sub.add_parser("regress", parents=[common], help="models on an observation CSV")
    reg.add_argument("--observations")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose")}
    try:
        cfg = load_config(args.config, overrides)
        cfg.validate(args.command)
        return COMMANDS[args.command](cfg)
    except Exception as exc:
        log.error("%s", exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
