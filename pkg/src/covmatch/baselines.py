"""SigMatch baseline, evaluation metrics, copula covariances and consensus graphs."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.stats

from .errors import DegenerateVariableError, InputError, ParameterError, SingularityError, UndefinedMetricError
from .sem import CovSpec, symmetrize


def nse(s_true: np.ndarray, s_est: np.ndarray) -> float:
    """Normalized squared error ||S_est - S||_F^2 / ||S||_F^2."""
    s_true = np.asarray(getattr(s_true, "entries", s_true), dtype=float)
    s_est = np.asarray(getattr(s_est, "entries", s_est), dtype=float)
    denom = float(np.sum(s_true * s_true))
    if denom == 0:
        raise UndefinedMetricError("NSE is undefined for an all-zero ground truth")
    return float(np.sum((s_est - s_true) ** 2) / denom)


def prune(s: np.ndarray, w_min: float) -> np.ndarray:
    if w_min < 0:
        raise ParameterError("w_min must be nonnegative")
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) < w_min, 0.0, s)


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def sigmatch_objective(s: np.ndarray, c: np.ndarray, alpha: float) -> float:
    return float(np.trace(s @ c @ s.T) - 2.0 * np.trace(s @ c) + alpha * np.abs(s).sum())


def sigmatch(
    c: CovSpec | np.ndarray,
    alpha: float,
    symmetric: bool = False,
    tol: float = 1e-8,
    max_sweeps: int = 10_000,
    history: list | None = None,
) -> np.ndarray:
    """Minimize tr(S C S^T) - 2 tr(S C) + alpha ||S||_1 by cyclic coordinate descent.

    Unconstrained by default (rows decouple, so each column update is done for
    all rows at once). ``symmetric=True`` restricts to symmetric hollow S and
    updates each off-diagonal pair jointly. Stops once a sweep changes the
    objective by at most ``tol``.
    """
    c = symmetrize(c.c if isinstance(c, CovSpec) else np.asarray(c, dtype=float))
    n = c.shape[0]
    s = np.zeros((n, n))
    obj = sigmatch_objective(s, c, alpha)
    if history is not None:
        history.append(obj)
    for _ in range(max_sweeps):
        if symmetric:
            for i in range(n):
                for j in range(i + 1, n):
                    a = c[i, i] + c[j, j]
                    if a <= 0:
                        continue
                    s[i, j] = s[j, i] = 0.0
                    sc = s @ c
                    b = 2.0 * (sc[i, j] + sc[j, i] - 2.0 * c[i, j])
                    s[i, j] = s[j, i] = _soft(-b / 2.0, alpha) / a
        else:
            for j in range(n):
                if c[j, j] <= 0:
                    s[:, j] = 0.0
                    continue
                r = c[:, j] - (s @ c[:, j] - s[:, j] * c[j, j])
                s[:, j] = _soft(r, alpha / 2.0) / c[j, j]
        new = sigmatch_objective(s, c, alpha)
        if history is not None:
            history.append(new)
        if abs(obj - new) <= tol:
            break
        obj = new
    return s


def sigmatch_asymptotic_objective(s_hat: np.ndarray, s: np.ndarray) -> float:
    """T -> infinity SigMatch cost (minus the constant trace) for white noise and symmetric ``s``."""
    h2 = np.linalg.matrix_power(np.linalg.inv(np.eye(s.shape[0]) - s), 2)
    return float(-2.0 * np.trace(s_hat @ h2) + np.trace(s_hat @ h2 @ s_hat.T))


def sigmatch_constrained_gradient(s_hat: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Derivative of the asymptotic SigMatch cost over symmetric matrices:
    ``df/dS + (df/dS)^T - Diag(df/dS)``."""
    h2 = np.linalg.matrix_power(np.linalg.inv(np.eye(s.shape[0]) - s), 2)
    partial = 2.0 * (s_hat - np.eye(s.shape[0])) @ h2
    return partial + partial.T - np.diag(np.diag(partial))


def sigmatch_stationarity_defect(s_true: np.ndarray, atol: float = 1e-8) -> np.ndarray:
    """Symmetrized SigMatch gradient at the truth, ``-4 (I - S)^-1``.

    Any nonzero off-diagonal entry is a feasible descent direction among
    symmetric hollow matrices, so the truth is not a stationary point.
    """
    s = np.asarray(getattr(s_true, "entries", s_true), dtype=float)
    n = s.shape[0]
    try:
        h = np.linalg.inv(np.eye(n) - s)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("I - S is singular") from exc
    partial = 2.0 * (s - np.eye(n)) @ h @ h
    assembled = partial + partial.T
    closed = -4.0 * h
    if np.max(np.abs(assembled - closed)) > atol * max(1.0, np.max(np.abs(closed))):
        raise SingularityError("gradient assembly disagrees with -4 (I - S)^-1; I - S ill conditioned")
    return closed


def kendall_copula_cov(x: np.ndarray) -> CovSpec:
    """Rank-based correlation ``sin(pi/2 * tau_b)`` for each pair of rows."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, t = x.shape
    if t < 2:
        raise InputError("need at least two samples")
    if np.any(np.ptp(x, axis=1) == 0):
        raise DegenerateVariableError("a variable is constant")
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            tau = scipy.stats.kendalltau(x[i], x[j], variant="b").statistic
            out[i, j] = out[j, i] = np.sin(0.5 * np.pi * tau)
    return CovSpec(out, "kendall", t)


def consensus_graph(graphs: list[np.ndarray], top_k: int, min_freq: int) -> np.ndarray:
    """Binary graph of edges that rank in a run's ``top_k`` by |weight| in at
    least ``min_freq`` runs. Diagonal entries are never edges; ties at the
    cutoff go to the lexicographically smaller (i, j)."""
    if not graphs:
        raise ParameterError("need at least one graph")
    mats = [np.asarray(getattr(g, "entries", g), dtype=float) for g in graphs]
    n = mats[0].shape[0]
    if any(m.shape != (n, n) for m in mats):
        raise ParameterError("all graphs must have the same size")
    off = ~np.eye(n, dtype=bool)
    ii, jj = np.nonzero(off)
    counts = np.zeros((n, n), dtype=int)
    for m in mats:
        w = np.abs(m[ii, jj])
        keep = np.flatnonzero(w > 0)
        # lexsort: last key is primary
        order = keep[np.lexsort((jj[keep], ii[keep], -w[keep]))][:top_k]
        counts[ii[order], jj[order]] += 1
    return (counts >= min_freq).astype(float)


@dataclass
class EvalReport:
    nse: float
    precision: float
    recall: float
    f1: float
    runtime_s: float = 0.0
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def evaluate(
    s_true: np.ndarray,
    s_est: np.ndarray,
    threshold: float = 0.0,
    runtime_s: float = 0.0,
    flags: list[str] | None = None,
) -> EvalReport:
    """NSE plus support precision/recall/F1 (estimate entries with |w| > threshold
    count as edges; the diagonal is ignored)."""
    s_true = np.asarray(getattr(s_true, "entries", s_true), dtype=float)
    s_est = np.asarray(getattr(s_est, "entries", s_est), dtype=float)
    off = ~np.eye(s_true.shape[0], dtype=bool)
    truth = (s_true != 0) & off
    est = (np.abs(s_est) > threshold) & off
    tp = int(np.sum(truth & est))
    precision = tp / est.sum() if est.sum() else 0.0
    recall = tp / truth.sum() if truth.sum() else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(nse(s_true, s_est), float(precision), float(recall), float(f1), runtime_s, list(flags or []))
