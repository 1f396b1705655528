"""Salience-weighted visual bags of words.

Binary descriptors are embedded as 0/1 real vectors, clustered with
weighted k-means into a vocabulary of visual words, and each document's
keypoints are counted per word with their salience weights.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from prominence.features import DEFAULT_BRIEF_SEED, N_BITS, WeightedKeypoint, stack

VOCAB_FORMAT_VERSION = 1
DEFAULT_K = 500
MOVE_TOL = 1e-6
# rounding allowance when checking that the objective never increases
_OBJ_SLACK = 1e-9


class EmptyDocumentError(ValueError):
    """A document has no keypoints; the caller should fall back to a dense grid."""


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: list[float]
    n_iter: int
    converged: bool


def sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, ``(n, k)``, clipped at zero."""
    d = (X * X).sum(axis=1)[:, None] + (C * C).sum(axis=1)[None, :] - 2.0 * (X @ C.T)
    return np.maximum(d, 0.0)


def _onehot(labels, k):
    m = np.zeros((len(labels), k))
    m[np.arange(len(labels)), labels] = 1.0
    return m


def _check_monotone(trace):
    if len(trace) > 1 and trace[-1] > trace[-2] + _OBJ_SLACK * max(1.0, abs(trace[-2])):
        raise RuntimeError(f"k-means objective increased: {trace[-2]!r} -> {trace[-1]!r}")


def weighted_kmeans(X, weights, k: int, max_iters: int = 100, seed: int = 0,
                    tol: float = MOVE_TOL) -> KMeansResult:
    """Weighted k-means++ seeding followed by weighted Lloyd iterations.

    Minimizes ``sum_i w_i * ||x_i - c_{a(i)}||^2``. Points with zero weight
    are assigned but never move a centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if k < 2:
        raise ValueError("k must be >= 2")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ValueError("all weights are zero")
    if np.count_nonzero(w > 0) < k:
        raise ValueError(f"fewer positive-weight points ({np.count_nonzero(w > 0)}) than k={k}")
    rng = np.random.default_rng(seed)
    n = len(X)

    centers = [int(rng.choice(n, p=w / w.sum()))]
    d2 = sq_distances(X, X[centers[-1]][None, :])[:, 0]
    for _ in range(1, k):
        score = w * d2
        total = score.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=score / total))
        else:
            # every positive-weight point coincides with a center already
            nxt = int(np.flatnonzero(w > 0)[len(centers) % np.count_nonzero(w > 0)])
        centers.append(nxt)
        d2 = np.minimum(d2, sq_distances(X, X[nxt][None, :])[:, 0])
    C = X[centers].copy()

    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        D = sq_distances(X, C)
        labels = D.argmin(axis=1)
        dmin = D[np.arange(n), labels]
        trace.append(float((w * dmin).sum()))
        _check_monotone(trace)
        oh = _onehot(labels, k)
        mass = oh.T @ w
        sums = oh.T @ (w[:, None] * X)
        newC = C.copy()
        live = mass > 0
        newC[live] = np.clip(sums[live] / mass[live][:, None], 0.0, 1.0)
        dead = np.flatnonzero(~live)
        if len(dead):
            far = np.where(w > 0, w * dmin, -1.0)
            for j in dead:
                i = int(np.argmax(far))
                if far[i] < 0:
                    break
                newC[j] = X[i]
                far[i] = -1.0
        shift = np.sqrt(((newC - C) ** 2).sum(axis=1)).max()
        C = newC
        if shift < tol:
            converged = True
            break
    D = sq_distances(X, C)
    labels = D.argmin(axis=1)
    trace.append(float((w * D[np.arange(n), labels]).sum()))
    _check_monotone(trace)
    return KMeansResult(C, labels, trace, it, converged)


def kmeans(X, k: int, max_iters: int = 100, seed: int = 0, tol: float = MOVE_TOL) -> KMeansResult:
    """Plain (unweighted) k-means++ / Lloyd with the same random stream as
    :func:`weighted_kmeans`, so unit weights reproduce it exactly."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"fewer points ({n}) than k={k}")
    rng = np.random.default_rng(seed)

    centers = [int(rng.choice(n, p=np.ones(n) / n))]
    d2 = sq_distances(X, X[centers[-1]][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = len(centers) % n
        centers.append(nxt)
        d2 = np.minimum(d2, sq_distances(X, X[nxt][None, :])[:, 0])
    C = X[centers].copy()

    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        D = sq_distances(X, C)
        labels = D.argmin(axis=1)
        dmin = D[np.arange(n), labels]
        trace.append(float(dmin.sum()))
        _check_monotone(trace)
        oh = _onehot(labels, k)
        counts = oh.T @ np.ones(n)
        sums = oh.T @ X
        newC = C.copy()
        live = counts > 0
        newC[live] = np.clip(sums[live] / counts[live][:, None], 0.0, 1.0)
        far = dmin.copy()
        for j in np.flatnonzero(~live):
            i = int(np.argmax(far))
            newC[j] = X[i]
            far[i] = -1.0
        shift = np.sqrt(((newC - C) ** 2).sum(axis=1)).max()
        C = newC
        if shift < tol:
            converged = True
            break
    D = sq_distances(X, C)
    labels = D.argmin(axis=1)
    trace.append(float(D[np.arange(n), labels].sum()))
    _check_monotone(trace)
    return KMeansResult(C, labels, trace, it, converged)


@dataclass
class Vocabulary:
    centroids: np.ndarray
    seed: int
    brief_seed: int = DEFAULT_BRIEF_SEED
    weighted_clustering: bool = True
    weighted_counts: bool = True
    objective: list[float] = field(default_factory=list)

    def __post_init__(self):
        C = np.asarray(self.centroids, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] < 2:
            raise ValueError("a vocabulary needs at least 2 centroids")
        if C.min() < 0.0 or C.max() > 1.0:
            raise ValueError("centroid components must lie in [0, 1]")
        self.centroids = C

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def to_json(self) -> str:
        return json.dumps({
            "format": "prominence-vocabulary",
            "version": VOCAB_FORMAT_VERSION,
            "k": self.k,
            "seed": self.seed,
            "brief_seed": self.brief_seed,
            "weighted_clustering": self.weighted_clustering,
            "weighted_counts": self.weighted_counts,
            "objective": self.objective,
            "centroids": self.centroids.tolist(),
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        doc = json.loads(text)
        if doc.get("format") != "prominence-vocabulary":
            raise ValueError("not a vocabulary file")
        if doc.get("version") != VOCAB_FORMAT_VERSION:
            raise ValueError(f"unsupported vocabulary version {doc.get('version')}")
        return cls(np.array(doc["centroids"]), doc["seed"], doc["brief_seed"],
                   doc["weighted_clustering"], doc["weighted_counts"], doc.get("objective", []))


def _flatten(features) -> list[WeightedKeypoint]:
    out = []
    for item in features:
        if isinstance(item, WeightedKeypoint):
            out.append(item)
        else:
            out.extend(item)
    return out


def build_vocabulary(features, k: int = DEFAULT_K, max_iters: int = 100, seed: int = 0,
                     weighted: bool = True, weighted_counts: bool = True,
                     brief_seed: int = DEFAULT_BRIEF_SEED) -> Vocabulary:
    """Cluster corpus descriptors into ``k`` visual words.

    ``features`` is a flat list of weighted keypoints or a list of
    per-image lists. With ``weighted=False`` every keypoint counts once.
    """
    X, w = stack(_flatten(features))
    if weighted:
        res = weighted_kmeans(X, w, k, max_iters, seed)
    else:
        res = kmeans(X, k, max_iters, seed)
    return Vocabulary(res.centroids, seed, brief_seed, weighted, weighted_counts, res.objective)


def quantize(doc_features: Sequence[WeightedKeypoint], vocab: Vocabulary,
             weighted: bool = True) -> np.ndarray:
    """Term vector of length ``k``: summed weights (or counts) per nearest word."""
    if len(doc_features) == 0:
        raise EmptyDocumentError("document has no keypoints")
    X, w = stack(list(doc_features))
    if X.shape[1] != vocab.centroids.shape[1]:
        raise ValueError("descriptor length differs from centroid length")
    labels = sq_distances(X, vocab.centroids).argmin(axis=1)
    vals = w if weighted else np.ones(len(w))
    return np.bincount(labels, weights=vals, minlength=vocab.k).astype(np.float64)


@dataclass
class DocumentTermMatrix:
    doc_ids: list[str]
    values: np.ndarray
    metadata: list[dict[str, Any]] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != len(self.doc_ids):
            raise ValueError("values must be (n_documents, n_terms)")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("term values must be finite and non-negative")
        self.values = v
        if not self.metadata:
            self.metadata = [{} for _ in self.doc_ids]

    @property
    def shape(self):
        return self.values.shape

    def index(self, doc_id: str) -> int:
        return self.doc_ids.index(doc_id)

    def drop_empty_terms(self) -> tuple["DocumentTermMatrix", np.ndarray]:
        keep = np.flatnonzero(self.values.sum(axis=0) > 0)
        return DocumentTermMatrix(list(self.doc_ids), self.values[:, keep],
                                  [dict(m) for m in self.metadata], list(self.dropped)), keep

    def to_csv(self) -> str:
        group_cols = sorted({key for m in self.metadata for key in m})
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["document", *group_cols, *[f"w{j}" for j in range(self.shape[1])]])
        for doc, meta, row in zip(self.doc_ids, self.metadata, self.values):
            wr.writerow([doc, *[meta.get(c, "") for c in group_cols], *[repr(float(x)) for x in row]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, group_cols: Iterable[str] = ()) -> "DocumentTermMatrix":
        """Parse a DTM CSV; columns other than ``document`` and ``group_cols``
        are terms."""
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if not header or header[0] != "document":
            raise ValueError("first column must be 'document'")
        group_cols = set(group_cols)
        gidx = [i for i, c in enumerate(header) if c in group_cols]
        tidx = [i for i, c in enumerate(header) if i > 0 and c not in group_cols]
        ids = [r[0] for r in body]
        meta = [{header[i]: r[i] for i in gidx} for r in body]
        vals = np.array([[float(r[i]) for i in tidx] for r in body], dtype=np.float64)
        return cls(ids, vals.reshape(len(ids), len(tidx)), meta)


def aggregate_documents(rows: Sequence[tuple[Mapping[str, Any], np.ndarray]],
                        group_by: str) -> DocumentTermMatrix:
    """Sum term vectors within each value of ``group_by``.

    Groups are emitted in sorted order; groups whose sum is all zero are
    dropped with a warning and listed in ``dropped``. Metadata values shared
    by every row of a group are kept on the aggregated document.
    """
    groups: dict[str, np.ndarray] = {}
    shared: dict[str, dict[str, Any]] = {}
    for i, (meta, vec) in enumerate(rows):
        if group_by not in meta or meta[group_by] in (None, ""):
            raise ValueError(f"row {i} is missing grouping column {group_by!r}")
        key = str(meta[group_by])
        vec = np.asarray(vec, dtype=np.float64)
        if key in groups:
            groups[key] = groups[key] + vec
            shared[key] = {m: v for m, v in shared[key].items() if meta.get(m) == v}
        else:
            groups[key] = vec.copy()
            shared[key] = dict(meta)
    if not groups:
        raise ValueError("no rows to aggregate")
    ids, vals, dropped = [], [], []
    for key in sorted(groups):
        if not np.any(groups[key] > 0):
            dropped.append(key)
            continue
        ids.append(key)
        vals.append(groups[key])
    if dropped:
        warnings.warn(f"dropped all-zero group(s): {', '.join(dropped)}", stacklevel=2)
    k = len(next(iter(groups.values())))
    meta = [{**shared[key], group_by: key} for key in ids]
    return DocumentTermMatrix(ids, np.array(vals).reshape(len(ids), k), meta, dropped)
