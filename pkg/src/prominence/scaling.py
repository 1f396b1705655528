"""Wordfish Poisson scaling of a document-term matrix.

Model: ``y_ij ~ Poisson(exp(alpha_i + psi_j + beta_j * omega_i))``. The
factorial term is dropped from the likelihood, so non-integer (weighted)
counts are accepted as a quasi-likelihood.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from prominence.vbow import DocumentTermMatrix

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 500
_MAX_HALVINGS = 40
_JITTER = 1e-3


class DegenerateMatrixError(ValueError):
    pass


class UnconvergedFitError(ValueError):
    pass


@dataclass
class WordfishFit:
    omega: np.ndarray
    alpha: np.ndarray
    psi: np.ndarray
    beta: np.ndarray
    loglik_trace: list[float]
    converged: bool
    n_iter: int
    doc_ids: list[str] = field(default_factory=list)
    orientation: tuple[int, int] = (0, 1)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    def rates(self) -> np.ndarray:
        return np.exp(self.alpha[:, None] + self.psi[None, :] + np.outer(self.omega, self.beta))

    def to_dict(self) -> dict:
        return {
            "documents": self.doc_ids,
            "omega": self.omega.tolist(),
            "alpha": self.alpha.tolist(),
            "psi": self.psi.tolist(),
            "beta": self.beta.tolist(),
            "loglik": self.loglik,
            "loglik_trace": self.loglik_trace,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "orientation": list(self.orientation),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def quasi_loglik(Y, alpha, psi, beta, omega) -> float:
    eta = alpha[:, None] + psi[None, :] + np.outer(omega, beta)
    return float((Y * eta - np.exp(eta)).sum())


def _newton_pairs(Y, a, b, base, x):
    """One safeguarded Newton step for many independent 2-parameter problems.

    Row ``r`` maximizes ``sum_c Y[r,c]*eta - exp(eta)`` with
    ``eta = a[r] + b[r] * x[c] + base[r, c]`` over ``(a[r], b[r])``.
    Steps are halved until each row's objective does not decrease.
    """
    def obj(a_, b_):
        eta = a_[:, None] + b_[:, None] * x[None, :] + base
        return (Y * eta - np.exp(eta)).sum(axis=1)

    eta = a[:, None] + b[:, None] * x[None, :] + base
    lam = np.exp(eta)
    r = Y - lam
    g_a = r.sum(axis=1)
    g_b = (r * x[None, :]).sum(axis=1)
    h_aa = lam.sum(axis=1)
    h_ab = (lam * x[None, :]).sum(axis=1)
    h_bb = (lam * x[None, :] ** 2).sum(axis=1)
    ridge = 1e-12 * (h_aa + h_bb) + 1e-300
    det = (h_aa + ridge) * (h_bb + ridge) - h_ab**2
    det = np.where(det > 0, det, np.inf)
    # Newton direction = (-Hessian)^{-1} gradient for the concave objective
    da = ((h_bb + ridge) * g_a - h_ab * g_b) / det
    db = ((h_aa + ridge) * g_b - h_ab * g_a) / det

    f0 = obj(a, b)
    step = np.ones_like(a)
    new_a, new_b = a.copy(), b.copy()
    pending = np.ones(len(a), dtype=bool)
    for _ in range(_MAX_HALVINGS):
        ta = a + step * da
        tb = b + step * db
        with np.errstate(over="ignore", invalid="ignore"):
            f1 = obj(ta, tb)
        ok = pending & np.isfinite(f1) & (f1 >= f0)
        new_a[ok], new_b[ok] = ta[ok], tb[ok]
        pending &= ~ok
        if not pending.any():
            break
        step = np.where(pending, step * 0.5, step)
    return new_a, new_b


def _identify(alpha, psi, beta, omega):
    """Standardize omega, center beta, anchor alpha_0 = 0.

    Each step leaves every ``eta_ij`` unchanged. Centering beta removes the
    flat direction ``beta_j + d, alpha_i - d * omega_i``.
    """
    m, s = omega.mean(), omega.std()
    if s <= 0:
        raise DegenerateMatrixError("document positions collapsed to a single point")
    psi = psi + beta * m
    beta = beta * s
    omega = (omega - m) / s
    mb = beta.mean()
    beta = beta - mb
    alpha = alpha + mb * omega
    psi = psi + alpha[0]
    alpha = alpha - alpha[0]
    return alpha, psi, beta, omega


def _initial_values(Y, seed):
    rng = np.random.default_rng(seed)
    n, k = Y.shape
    rmean = Y.mean(axis=1)
    cmean = Y.mean(axis=0)
    alpha = np.log(rmean / rmean[0])
    psi = np.log(cmean)
    L = np.log(Y + 0.1)
    Z = L - L.mean(axis=1, keepdims=True) - L.mean(axis=0, keepdims=True) + L.mean()
    U, S, Vt = np.linalg.svd(Z, full_matrices=False)
    u = U[:, 0] * np.sqrt(n)
    omega = u + rng.normal(0.0, _JITTER, n)
    beta = S[0] * Vt[0] / np.sqrt(n) + rng.normal(0.0, _JITTER, k)
    return alpha, psi, beta, omega


def _as_matrix(dtm):
    if isinstance(dtm, DocumentTermMatrix):
        return dtm.values, list(dtm.doc_ids)
    Y = np.asarray(dtm, dtype=np.float64)
    return Y, [str(i) for i in range(Y.shape[0])]


def _resolve_orientation(orientation, doc_ids):
    out = []
    for item in orientation:
        if isinstance(item, (int, np.integer)):
            out.append(int(item))
        elif str(item) in doc_ids:
            out.append(doc_ids.index(str(item)))
        else:
            raise ValueError(f"orientation document {item!r} not among {doc_ids[:10]}")
    if len(out) != 2 or out[0] == out[1]:
        raise ValueError("orientation needs two distinct documents")
    return tuple(out)


def fit_wordfish(dtm, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
                 seed: int = 0, orientation=(0, 1), start: WordfishFit | None = None
                 ) -> WordfishFit:
    """Fit Wordfish by alternating conditional Newton steps.

    Parameters
    ----------
    dtm : DocumentTermMatrix or array (n_docs, n_terms)
        Non-negative counts or weighted counts, no all-zero row or column.
    tol : float
        Stop when the relative change in quasi-log-likelihood falls below.
    max_iters : int
        Maximum number of (document, term) update cycles; hitting it sets
        ``converged=False`` rather than raising.
    orientation : pair of document indices or ids
        Output is signed so the first document lies left of the second.
    start : WordfishFit, optional
        Warm start (used by the bootstrap).
    """
    Y, doc_ids = _as_matrix(dtm)
    if Y.ndim != 2 or Y.shape[0] < 2 or Y.shape[1] < 2:
        raise DegenerateMatrixError("need at least 2 documents and 2 terms")
    if not np.all(np.isfinite(Y)) or np.any(Y < 0):
        raise DegenerateMatrixError("entries must be finite and non-negative")
    if np.any(Y.sum(axis=1) <= 0) or np.any(Y.sum(axis=0) <= 0):
        raise DegenerateMatrixError("matrix has an all-zero row or column")
    ori = _resolve_orientation(orientation, doc_ids)

    if start is None:
        alpha, psi, beta, omega = _initial_values(Y, seed)
    else:
        alpha, psi, beta, omega = (start.alpha.copy(), start.psi.copy(),
                                   start.beta.copy(), start.omega.copy())
    alpha, psi, beta, omega = _identify(alpha, psi, beta, omega)
    trace = [quasi_loglik(Y, alpha, psi, beta, omega)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        # documents: (alpha_i, omega_i) given word parameters
        alpha, omega = _newton_pairs(Y, alpha, omega, np.broadcast_to(psi, Y.shape), beta)
        # terms: (psi_j, beta_j) given document parameters
        psi, beta = _newton_pairs(Y.T, psi, beta, np.broadcast_to(alpha, Y.T.shape), omega)
        alpha, psi, beta, omega = _identify(alpha, psi, beta, omega)
        trace.append(quasi_loglik(Y, alpha, psi, beta, omega))
        if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            converged = True
            break
    if not converged:
        log.warning("wordfish did not converge in %d iterations", max_iters)
    if omega[ori[0]] > omega[ori[1]]:
        omega, beta = -omega, -beta
    return WordfishFit(omega, alpha, psi, beta, trace, converged, it, doc_ids, ori)


def bootstrap_ci(dtm, fit: WordfishFit, draws: int = 100, seed: int = 0,
                 level: float = 0.95) -> np.ndarray:
    """Parametric-bootstrap percentile intervals for document positions.

    Returns an ``(n_docs, 2)`` array of ``[lo, hi]``; empty when
    ``draws == 0``. Terms that receive no counts in a replicate are
    dropped from that replicate's refit.
    """
    if not fit.converged:
        raise UnconvergedFitError("bootstrap needs a converged fit")
    Y, _ = _as_matrix(dtm)
    if draws <= 0:
        return np.zeros((0, 2))
    rng = np.random.default_rng(seed)
    lam = fit.rates()
    reps = []
    attempts = 0
    while len(reps) < draws and attempts < 10 * draws:
        attempts += 1
        Ystar = rng.poisson(lam).astype(np.float64)
        keep = Ystar.sum(axis=0) > 0
        if np.any(Ystar.sum(axis=1) <= 0) or keep.sum() < 2:
            continue
        start = WordfishFit(fit.omega, fit.alpha, fit.psi[keep], fit.beta[keep], [0.0],
                            True, 0)
        try:
            rep = fit_wordfish(Ystar[:, keep], tol=1e-8, max_iters=200,
                               orientation=fit.orientation, start=start)
        except DegenerateMatrixError:
            continue
        reps.append(rep.omega)
    if not reps:
        raise RuntimeError("no usable bootstrap replicate")
    reps = np.array(reps)
    q = (1.0 - level) / 2.0
    return np.stack([np.quantile(reps, q, axis=0), np.quantile(reps, 1.0 - q, axis=0)], axis=1)


def idealpoint_csv(fit: WordfishFit, intervals: np.ndarray | None = None) -> str:
    """Plot-ready ``document,omega,lo,hi`` rows (intervals blank if absent)."""
    lines = ["document,omega,lo,hi"]
    for i, doc in enumerate(fit.doc_ids):
        if intervals is not None and len(intervals):
            lo, hi = repr(float(intervals[i, 0])), repr(float(intervals[i, 1]))
        else:
            lo = hi = ""
        lines.append(f"{doc},{float(fit.omega[i])!r},{lo},{hi}")
    return "\n".join(lines) + "\n"
