"""Linear models with fixed-effect dummies and cluster-robust errors.

The estimator is ordinary least squares reported GLM-style (Gaussian
deviance, log-likelihood at the MLE variance, pseudo R-squared against the
intercept-only model). Standard errors are CR1 clustered.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import linalg
from scipy import stats as sps

INTERCEPT = "(Intercept)"
FRAME_UID = "frame_uid"

TERM_LABELS = {
    "gender[female]": "Gender: Female",
    "party[rep]": "Party: Republican",
    "gender[female]:party[rep]": "Gender: Female x Party: Republican",
}
FACTOR_LABELS = {
    "candidate_id": "Candidate ID",
    "candidate_visible": "Candidate Visible",
    "election_year": "Election Year",
}


class RankDeficiencyError(ValueError):
    """The design matrix is rank deficient.

    ``aliased`` maps each dropped column to the kept columns it is a
    linear combination of (empty for an all-zero column).
    """

    def __init__(self, aliased: Mapping[str, list[str]]):
        self.aliased = dict(aliased)
        parts = []
        for col, partners in self.aliased.items():
            if partners:
                parts.append(f"{col} ~ {' + '.join(partners)}")
            else:
                parts.append(f"{col} is constant zero")
        super().__init__("aliased columns: " + "; ".join(parts))


@dataclass(frozen=True)
class ModelSpec:
    outcome: str
    main_effects: tuple[str, ...] = ("gender", "party")
    interactions: tuple[tuple[str, str], ...] = (("gender", "party"),)
    fixed_effects: tuple[str, ...] = ("candidate_id", "election_year", "candidate_visible")
    cluster: str = FRAME_UID
    reference_levels: Mapping[str, str] = field(
        default_factory=lambda: {"gender": "male", "party": "dem"})
    # declared levels get a dummy even when absent from the data, so a
    # missing level surfaces as aliasing instead of a silently dropped term
    factor_levels: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: {"gender": ("female", "male"), "party": ("dem", "rep")})

    def __post_init__(self):
        for a, b in self.interactions:
            if a not in self.main_effects or b not in self.main_effects:
                raise ValueError(f"interaction {a}:{b} references undeclared main effects")


@dataclass
class RegressionResult:
    terms: list[str]
    estimates: np.ndarray
    se: np.ndarray
    pvalues: np.ndarray
    nobs: int
    groups: dict[str, int]
    deviance: float
    loglik: float
    pseudo_r2: float
    null_deviance: float = float("nan")
    n_clusters: int = 0
    n_excluded: int = 0
    vcov: np.ndarray | None = None
    outcome: str = ""

    @property
    def tstats(self) -> np.ndarray:
        return self.estimates / self.se

    def coef(self, term: str) -> float:
        return float(self.estimates[self.terms.index(term)])

    def stderr(self, term: str) -> float:
        return float(self.se[self.terms.index(term)])

    def pvalue(self, term: str) -> float:
        return float(self.pvalues[self.terms.index(term)])


def _level_str(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def prepare_table(table, spec: ModelSpec) -> tuple[pd.DataFrame, int]:
    """Add the derived cluster column and apply listwise deletion."""
    df = table.to_frame() if hasattr(table, "to_frame") else pd.DataFrame(table)
    df = df.copy()
    if spec.cluster == FRAME_UID and FRAME_UID not in df.columns:
        if "video_id" not in df.columns or "frame_id" not in df.columns:
            raise ValueError("cluster column missing: need video_id and frame_id")
        df[FRAME_UID] = df["video_id"].astype(str) + ":" + df["frame_id"].astype(str)
    needed = [spec.outcome, *spec.main_effects, *spec.fixed_effects, spec.cluster]
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise ValueError(f"missing columns: {', '.join(missing)}")
    before = len(df)
    df = df.dropna(subset=needed)
    df = df.reset_index(drop=True)
    return df, before - len(df)


def _dummies(values: pd.Series, name: str, reference: str | None, declared=()):
    lv = values.map(_level_str)
    levels = sorted(set(lv.unique()) | set(declared))
    ref = reference if reference in levels else levels[0]
    cols = {}
    for level in levels:
        if level == ref:
            continue
        cols[f"{name}[{level}]"] = (lv == level).to_numpy(dtype=np.float64)
    return cols


def design_matrix(df: pd.DataFrame, spec: ModelSpec):
    """Return ``(X, names, n_effect_terms)``; effect terms come first after
    the intercept, fixed-effect dummies last."""
    cols: dict[str, np.ndarray] = {INTERCEPT: np.ones(len(df))}
    per_var: dict[str, dict[str, np.ndarray]] = {}
    for var in spec.main_effects:
        s = df[var]
        if pd.api.types.is_numeric_dtype(s) and not pd.api.types.is_bool_dtype(s):
            d = {var: s.to_numpy(dtype=np.float64)}
        else:
            d = _dummies(s, var, spec.reference_levels.get(var),
                         spec.factor_levels.get(var, ()))
        per_var[var] = d
        cols.update(d)
    for a, b in spec.interactions:
        for na, va in per_var[a].items():
            for nb, vb in per_var[b].items():
                cols[f"{na}:{nb}"] = va * vb
    n_effect = len(cols)
    for factor in spec.fixed_effects:
        for name, v in _dummies(df[factor], factor, None).items():
            cols[f"FE:{name}"] = v
    names = list(cols)
    X = np.column_stack([cols[n] for n in names]) if len(df) else np.zeros((0, len(names)))
    return X, names, n_effect


def check_rank(X: np.ndarray, names: Sequence[str], tol: float = 1e-9) -> None:
    """Raise :class:`RankDeficiencyError` naming aliased columns."""
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    scale = diag[0] if len(diag) and diag[0] > 0 else 1.0
    rank = int(np.sum(diag > tol * scale * max(X.shape)))
    if rank == X.shape[1]:
        return
    kept = sorted(piv[:rank])
    aliased = {}
    for j in sorted(piv[rank:]):
        if not np.any(X[:, j]):
            aliased[names[j]] = []
            continue
        coef, *_ = np.linalg.lstsq(X[:, kept], X[:, j], rcond=None)
        aliased[names[j]] = [names[kept[i]] for i in np.flatnonzero(np.abs(coef) > 1e-8)]
    raise RankDeficiencyError(aliased)


def clustered_vcov(X: np.ndarray, resid: np.ndarray, clusters, bread: np.ndarray | None = None
                   ) -> np.ndarray:
    """CR1 sandwich ``c * B M B`` with ``c = G/(G-1) * (N-1)/(N-K)``."""
    X = np.asarray(X, dtype=np.float64)
    n, k = X.shape
    codes, uniq = pd.factorize(pd.Series(list(clusters)), sort=True)
    if (codes < 0).any():
        raise ValueError("every row needs a cluster id")
    G = len(uniq)
    if G < 2:
        raise ValueError("clustered errors need at least 2 clusters")
    if bread is None:
        bread = np.linalg.inv(X.T @ X)
    scores = X * np.asarray(resid, dtype=np.float64)[:, None]
    U = np.zeros((G, k))
    np.add.at(U, codes, scores)
    meat = U.T @ U
    c = G / (G - 1) * (n - 1) / (n - k)
    V = c * bread @ meat @ bread
    return (V + V.T) / 2.0


def clustered_se(X, resid, clusters) -> np.ndarray:
    return np.sqrt(np.clip(np.diag(clustered_vcov(X, resid, clusters)), 0.0, None))


def fit_fe_ols(table, spec: ModelSpec) -> RegressionResult:
    """OLS with dummy-expanded fixed effects and CR1 clustered errors.

    Only the intercept and the effect terms are reported; fixed-effect
    dummies are estimated but not returned. p-values use a t distribution
    with ``G - 1`` degrees of freedom.
    """
    df, n_excluded = prepare_table(table, spec)
    if len(df) == 0:
        raise ValueError("empty table after listwise deletion")
    X, names, n_effect = design_matrix(df, spec)
    y = df[spec.outcome].to_numpy(dtype=np.float64)
    n, k = X.shape
    if n <= k:
        raise ValueError(f"too few observations ({n}) for {k} parameters")
    check_rank(X, names)
    Q, R = np.linalg.qr(X)
    beta = linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    Rinv = linalg.solve_triangular(R, np.eye(k))
    bread = Rinv @ Rinv.T
    clusters = df[spec.cluster].map(_level_str).to_numpy()
    V = clustered_vcov(X, resid, clusters, bread)
    G = len(np.unique(clusters))
    se = np.sqrt(np.clip(np.diag(V), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se  # perfect fits give se = 0
    p = 2.0 * sps.t.sf(np.abs(t), df=G - 1)

    dev = float(resid @ resid)
    null_dev = float(((y - y.mean()) ** 2).sum())
    loglik = -0.5 * n * (math.log(2.0 * math.pi * dev / n) + 1.0) if dev > 0 else math.inf
    pseudo = 1.0 - dev / null_dev if null_dev > 0 else float("nan")
    groups = {f: int(df[f].map(_level_str).nunique()) for f in spec.fixed_effects}
    sl = slice(0, n_effect)
    return RegressionResult(
        terms=names[sl], estimates=beta[sl], se=se[sl], pvalues=p[sl], nobs=n,
        groups=groups, deviance=dev, loglik=loglik, pseudo_r2=pseudo,
        null_deviance=null_dev, n_clusters=G, n_excluded=n_excluded,
        vcov=V[sl, sl], outcome=spec.outcome,
    )


# -- reporting -------------------------------------------------------------

def stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def _num(x: float, digits: int = 2) -> str:
    s = f"{x:.{digits}f}"
    return s[1:] if s.startswith("-") and float(s) == 0 else s


def format_coef(est: float, se: float, p: float) -> str:
    """``0.48*** (0.05)``."""
    return f"{_num(est)}{stars(p)} ({_num(se)})"


def term_label(term: str) -> str:
    if term in TERM_LABELS:
        return TERM_LABELS[term]
    parts = []
    for piece in term.split(":"):
        if "[" in piece:
            var, level = piece[:-1].split("[", 1)
            parts.append(f"{var.replace('_', ' ').title()}: {level.title()}")
        else:
            parts.append(piece)
    return " x ".join(parts)


def _report_rows(results: Mapping[str, RegressionResult], include_intercept: bool):
    terms: list[str] = []
    for res in results.values():
        for t in res.terms:
            if t == INTERCEPT and not include_intercept:
                continue
            if t not in terms:
                terms.append(t)
    coef_rows = []
    for t in terms:
        est, err = [], []
        for res in results.values():
            if t in res.terms:
                i = res.terms.index(t)
                est.append(f"{_num(res.estimates[i])}{stars(res.pvalues[i])}")
                err.append(f"({_num(res.se[i])})")
            else:
                est.append("")
                err.append("")
        coef_rows.append((term_label(t), est, err))
    factors = sorted({f for r in results.values() for f in r.groups},
                     key=lambda f: FACTOR_LABELS.get(f, f))
    stat_rows = [("Num. obs.", [str(r.nobs) for r in results.values()])]
    for f in factors:
        label = f"Num. groups: {FACTOR_LABELS.get(f, f)}"
        stat_rows.append((label, [str(r.groups[f]) if f in r.groups else ""
                                  for r in results.values()]))
    stat_rows += [
        ("Deviance", [_num(r.deviance) for r in results.values()]),
        ("Log Likelihood", [_num(r.loglik) for r in results.values()]),
        ("Pseudo R^2", [_num(r.pseudo_r2) for r in results.values()]),
    ]
    return coef_rows, stat_rows


def report_table(results: Mapping[str, RegressionResult], include_intercept: bool = False) -> str:
    """Side-by-side text table: coefficients with stars, SEs in parentheses
    beneath, then observation/group counts and fit statistics."""
    coef_rows, stat_rows = _report_rows(results, include_intercept)
    names = list(results)
    labels = [r[0] for r in coef_rows] + [r[0] for r in stat_rows]
    lw = max(len(s) for s in labels) + 2
    cells = [c for _, e, s in coef_rows for c in e + s] + [c for _, v in stat_rows for c in v]
    cw = max([len(n) for n in names] + [len(c) for c in cells]) + 2
    width = lw + cw * len(names)
    out = ["=" * width, " " * lw + "".join(n.ljust(cw) for n in names).rstrip(), "-" * width]
    for label, est, err in coef_rows:
        out.append((label.ljust(lw) + "".join(c.ljust(cw) for c in est)).rstrip())
        out.append((" " * lw + "".join(c.ljust(cw) for c in err)).rstrip())
    out.append("-" * width)
    for label, vals in stat_rows:
        out.append((label.ljust(lw) + "".join(c.ljust(cw) for c in vals)).rstrip())
    out.append("=" * width)
    out.append("***p < 0.001; **p < 0.01; *p < 0.05")
    return "\n".join(out) + "\n"


def report_csv(results: Mapping[str, RegressionResult], include_intercept: bool = False) -> str:
    coef_rows, stat_rows = _report_rows(results, include_intercept)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["row", *results])
    for label, est, err in coef_rows:
        wr.writerow([label, *est])
        wr.writerow(["", *err])
    for label, vals in stat_rows:
        wr.writerow([label, *vals])
    return buf.getvalue()


def interaction_plot_csv(results: Mapping[str, RegressionResult]) -> str:
    """``model,term,estimate,se`` for every non-intercept term."""
    lines = ["model,term,estimate,se"]
    for model, res in results.items():
        for i, t in enumerate(res.terms):
            if t == INTERCEPT:
                continue
            lines.append(f"{model},{t},{float(res.estimates[i])!r},{float(res.se[i])!r}")
    return "\n".join(lines) + "\n"
