"""Directed graphs: search over the rotation ambiguity V on O(N).

Every orthogonal ``V`` gives an ``S(V) = I - V diag(lam**-0.5) U^T`` that
reproduces the covariance exactly (colored noise: ``I - Sigma_e^(1/2) V L^-1``
with ``C = L L^T``). The search minimizes

    J(V) = ||diag(S(V))||^2 + alpha * ||S(V)||_1

by Riemannian gradient descent with basin hopping over a diverse candidate set.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from ._rng import derive
from .errors import ParameterError, RankDeficiencyError
from .ortho import (
    SMALL_STEP,
    EigenPair,
    OrthoPoint,
    evd_sym,
    expm_small,
    geodesic_sample,
    ortho_exp,
    random_orthogonal,
)
from .sem import CovSpec, symmetrize


@dataclass
class DirectedProblem:
    """Objective data. ``left`` is None for white noise, otherwise
    ``Sigma_e^(1/2)``; ``right`` maps V to the estimate: ``S = I - left V right``."""

    eig: EigenPair
    alpha: float
    huber_delta: float
    right: np.ndarray
    left: np.ndarray | None = None
    chol_l: np.ndarray | None = None
    sigma_e_sqrt: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.right.shape[0]

    @property
    def colored(self) -> bool:
        return self.chol_l is not None


def build_directed_problem(
    c: CovSpec | np.ndarray,
    alpha: float = 1e-2,
    sigma_e: np.ndarray | None = None,
    huber_delta: float | None = None,
    eig_floor: float | None = None,
) -> DirectedProblem:
    if alpha < 0:
        raise ParameterError("alpha must be nonnegative")
    a = c.c if isinstance(c, CovSpec) else np.asarray(c, dtype=float)
    eig = evd_sym(a, eig_floor=eig_floor)
    scale = eig.inv_sqrt()
    if huber_delta is None:
        huber_delta = 1e-3 * float(np.median(scale))
    if sigma_e is None:
        return DirectedProblem(eig, float(alpha), huber_delta, scale[:, None] * eig.u.T)
    sigma_e = np.asarray(sigma_e, dtype=float)
    evals, evecs = np.linalg.eigh(symmetrize(sigma_e))
    if np.min(evals) <= 0:
        raise ParameterError("sigma_e is not positive definite")
    root = symmetrize((evecs * np.sqrt(evals)) @ evecs.T)
    if eig_floor is not None:
        a = symmetrize((eig.u * eig.lam) @ eig.u.T)
    try:
        chol = np.linalg.cholesky(symmetrize(a))
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("covariance is not positive definite") from exc
    right = scipy.linalg.solve_triangular(chol, np.eye(chol.shape[0]), lower=True)
    return DirectedProblem(eig, float(alpha), huber_delta, right, root, chol, root)


@dataclass(frozen=True)
class GdSchedule:
    """Step sizes decay exponentially from ``mu_start`` to ``mu_end`` over ``r_max``
    iterations. After ``stall_switch`` iterations without improvement the smooth
    sparsity gradient is replaced by its sign; after a further ``plateau_stop``
    the run stops (None disables early stopping)."""

    r_max: int = 10_000
    mu_start: float = 2e-2
    mu_end: float = 4e-3
    stall_switch: int = 30
    plateau_stop: int | None = 35

    def __post_init__(self):
        if self.r_max < 1:
            raise ParameterError("r_max must be at least 1")
        if not (self.mu_start >= self.mu_end > 0):
            raise ParameterError("need mu_start >= mu_end > 0")

    def step(self, r: int) -> float:
        if self.r_max == 1:
            return self.mu_start
        return self.mu_start * (self.mu_end / self.mu_start) ** (r / (self.r_max - 1))


FRESH = GdSchedule(mu_start=2e-2, mu_end=4e-3)
CANDIDATE = GdSchedule(mu_start=1e-3, mu_end=2e-4)

BUDGETS = {
    "desk": {"k": 20, "l": 8, "capacity": 8},
    "full": {"k": 200, "l": 64, "capacity": 64},
}


# -- batched objective and gradient -------------------------------------------------


def _estimate(p: DirectedProblem, v: np.ndarray) -> np.ndarray:
    lv = v if p.left is None else p.left @ v
    return np.eye(p.n) - lv @ p.right


def _diag(s: np.ndarray) -> np.ndarray:
    return np.diagonal(s, axis1=-2, axis2=-1)


def _huber(s: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(s)
    return np.where(a <= delta, s * s / (2.0 * delta), a - 0.5 * delta)


def _costs(p: DirectedProblem, s: np.ndarray, smooth: bool = False) -> np.ndarray:
    d = _diag(s)
    hollow = np.sum(d * d, axis=-1)
    sparse = _huber(s, p.huber_delta) if smooth else np.abs(s)
    return hollow + p.alpha * np.sum(sparse, axis=(-2, -1))


def _dcost(p: DirectedProblem, s: np.ndarray, sign_mode: np.ndarray | bool) -> np.ndarray:
    # derivative of the cost with respect to S
    if np.ndim(sign_mode) == 0:
        psi = np.sign(s) if sign_mode else np.clip(s / p.huber_delta, -1.0, 1.0)
    else:
        psi = np.where(sign_mode[:, None, None], np.sign(s), np.clip(s / p.huber_delta, -1.0, 1.0))
    ds = p.alpha * psi
    idx = np.arange(p.n)
    ds[..., idx, idx] += 2.0 * _diag(s)
    return ds


def _grad(p: DirectedProblem, s: np.ndarray, sign_mode: np.ndarray | bool) -> np.ndarray:
    g = -(_dcost(p, s, sign_mode) @ p.right.T)
    return g if p.left is None else p.left.T @ g


def _skew_direction(p: DirectedProblem, s: np.ndarray, v: np.ndarray, sign_mode) -> np.ndarray:
    """``Gamma V^T - V Gamma^T`` for a stack of points."""
    if p.left is None:
        # Gamma V^T = -dS (V R)^T = dS S^T - dS, one product instead of two
        ds = _dcost(p, s, sign_mode)
        a = ds @ s.transpose(0, 2, 1) - ds
    else:
        a = _grad(p, s, sign_mode) @ v.transpose(0, 2, 1)
    return a - a.transpose(0, 2, 1)


def objective_j(p: DirectedProblem, v: OrthoPoint | np.ndarray, smooth: bool = False) -> float:
    v = v.v if isinstance(v, OrthoPoint) else np.asarray(v, dtype=float)
    return float(_costs(p, _estimate(p, v[None]), smooth)[0])


def objective_s(p: DirectedProblem, s: np.ndarray) -> float:
    """J evaluated directly on a GSO (the truth need not be of the form S(V))."""
    s = np.asarray(getattr(s, "entries", s), dtype=float)
    return float(_costs(p, s[None])[0])


def euclidean_grad(p: DirectedProblem, v: OrthoPoint | np.ndarray, smooth: bool = True) -> np.ndarray:
    """Euclidean gradient of J (Huber-smoothed l1 if ``smooth``, sign subgradient otherwise)."""
    v = v.v if isinstance(v, OrthoPoint) else np.asarray(v, dtype=float)
    return _grad(p, _estimate(p, v[None]), not smooth)[0]


def reconstruct_directed(p: DirectedProblem, v: OrthoPoint | np.ndarray) -> np.ndarray:
    v = v.v if isinstance(v, OrthoPoint) else np.asarray(v, dtype=float)
    return _estimate(p, v)


def reconstruct_directed_colored(p: DirectedProblem, v: OrthoPoint | np.ndarray) -> np.ndarray:
    """``I - Sigma_e^(1/2) V L^-1``."""
    if not p.colored:
        raise ParameterError("problem was built without a noise covariance")
    v = v.v if isinstance(v, OrthoPoint) else np.asarray(v, dtype=float)
    vt = scipy.linalg.solve_triangular(p.chol_l, v.T, lower=True, trans="T")
    return np.eye(p.n) - p.sigma_e_sqrt @ vt.T


def true_rotation(p: DirectedProblem, s: np.ndarray) -> OrthoPoint:
    """The V that maps to a known ``s`` (orthogonal when the covariance is exact)."""
    a = np.eye(p.n) - np.asarray(s, dtype=float)
    if p.left is not None:
        a = np.linalg.solve(p.left, a)
    v = np.linalg.solve(p.right.T, a.T).T
    return OrthoPoint(v, objective_j(p, v))


# -- Riemannian gradient descent ------------------------------------------------------


@dataclass
class RefineResult:
    v: np.ndarray
    cost: np.ndarray
    iterations: np.ndarray
    switched: np.ndarray


def _step_table(sched: list[GdSchedule], r_max: int) -> tuple[np.ndarray, np.ndarray]:
    # per-schedule step sizes, computed once with scalar arithmetic
    uniq = list(dict.fromkeys(sched))
    table = np.zeros((len(uniq), r_max))
    for i, sc in enumerate(uniq):
        table[i, : sc.r_max] = [sc.step(r) for r in range(sc.r_max)]
    return table, np.array([uniq.index(sc) for sc in sched])


def _refine_batch(
    p: DirectedProblem,
    v0: np.ndarray,
    sched: list[GdSchedule],
    smooth: bool = True,
    callback=None,
) -> RefineResult:
    """Run gradient descent on a stack of starting points.

    Each member's arithmetic is independent of the rest of the stack, so
    splitting a batch differently gives bit-identical results.
    """
    b = v0.shape[0]
    r_max = max(s.r_max for s in sched)
    table, sid = _step_table(sched, r_max)

    out_v = np.array(v0, dtype=float, copy=True)
    out_cost = np.empty(b)
    out_iters = np.zeros(b, dtype=np.int64)
    out_switched = np.zeros(b, dtype=bool)

    # state of the active members only; compacted whenever some finish
    idx = np.arange(b)
    va = out_v.copy()
    sa = _estimate(p, va)
    best_c = _costs(p, sa)
    best_v = va.copy()
    sign_mode = np.full(b, not smooth)
    switched = np.zeros(b, dtype=bool)
    stall = np.zeros(b, dtype=np.int64)
    stall_switch = np.array([s.stall_switch for s in sched])
    plateau = np.array([s.plateau_stop if s.plateau_stop is not None else -1 for s in sched])
    own_rmax = np.array([s.r_max for s in sched])
    iters = np.zeros(b, dtype=np.int64)

    def retire(keep):
        nonlocal idx, va, sa, best_c, best_v, sign_mode, switched, stall
        nonlocal stall_switch, plateau, own_rmax, iters, sid
        gone = ~keep
        out_v[idx[gone]] = best_v[gone]
        out_cost[idx[gone]] = best_c[gone]
        out_iters[idx[gone]] = iters[gone]
        out_switched[idx[gone]] = switched[gone]
        idx, va, sa, best_c, best_v = idx[keep], va[keep], sa[keep], best_c[keep], best_v[keep]
        sign_mode, switched, stall = sign_mode[keep], switched[keep], stall[keep]
        stall_switch, plateau, own_rmax = stall_switch[keep], plateau[keep], own_rmax[keep]
        iters, sid = iters[keep], sid[keep]

    for r in range(r_max):
        keep = own_rmax > r
        if not keep.all():
            retire(keep)
        if idx.size == 0:
            break
        g = _skew_direction(p, sa, va, sign_mode)
        norm = np.sqrt(np.sum(g * g, axis=(1, 2)))
        moving = norm > 0
        if not moving.all():
            # stationary: nothing left to do for these members
            retire(moving)
            g, norm = g[moving], norm[moving]
            if idx.size == 0:
                break
        mu = table[sid, r]
        x = g * (-mu / norm)[:, None, None]
        small = mu <= SMALL_STEP
        if small.all():
            step = expm_small(x)
        else:
            step = np.empty_like(x)
            if small.any():
                step[small] = expm_small(x[small])
            for k in np.flatnonzero(~small):
                step[k] = ortho_exp(x[k]).v
        va = step @ va
        sa = _estimate(p, va)
        c = _costs(p, sa)
        iters += 1
        if callback is not None:
            callback(r, idx, va)

        better = c < best_c
        best_c = np.where(better, c, best_c)
        best_v[better] = va[better]
        stall = np.where(better, 0, stall + 1)

        flip = ~sign_mode & (stall >= stall_switch)
        if flip.any():
            sign_mode = sign_mode | flip
            switched = switched | flip
            stall = np.where(flip, 0, stall)
        done = sign_mode & (plateau >= 0) & (stall >= plateau)
        if done.any():
            own_rmax = np.where(done, r + 1, own_rmax)
    retire(np.zeros(idx.size, dtype=bool))
    return RefineResult(out_v, out_cost, out_iters, out_switched)


def riemann_gd(
    p: DirectedProblem,
    v0: OrthoPoint | np.ndarray,
    sched: GdSchedule = FRESH,
    smooth: bool = True,
    callback=None,
) -> OrthoPoint:
    """Gradient descent on O(N) through the exponential map.

    Returns the best iterate visited (never worse than ``v0``). ``callback``,
    if given, receives ``(r, V_r)`` after every update.
    """
    start = v0.v if isinstance(v0, OrthoPoint) else np.asarray(v0, dtype=float)
    cb = None if callback is None else (lambda r, act, va: callback(r, va[0]))
    res = _refine_batch(p, start[None], [sched], smooth, cb)
    tag = v0.seed_tag if isinstance(v0, OrthoPoint) else ""
    return OrthoPoint(res.v[0], float(res.cost[0]), tag)


def refine_many(
    p: DirectedProblem,
    starts: list[np.ndarray],
    scheds: list[GdSchedule],
    workers: int = 1,
    smooth: bool = True,
) -> RefineResult:
    """Refine several starting points, split over ``workers`` threads."""
    m = len(starts)
    if m == 0:
        return RefineResult(np.zeros((0, p.n, p.n)), np.zeros(0), np.zeros(0, int), np.zeros(0, bool))
    stack = np.stack(starts)
    workers = max(1, min(int(workers), m))
    if workers == 1:
        return _refine_batch(p, stack, list(scheds), smooth)
    bounds = np.linspace(0, m, workers + 1).astype(int)
    chunks = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: _refine_batch(p, stack[c[0]:c[1]], list(scheds[c[0]:c[1]]), smooth), chunks))
    return RefineResult(
        np.concatenate([r.v for r in parts]),
        np.concatenate([r.cost for r in parts]),
        np.concatenate([r.iterations for r in parts]),
        np.concatenate([r.switched for r in parts]),
    )


# -- basin hopping ------------------------------------------------------------------


@dataclass
class SearchResult:
    best: OrthoPoint
    candidates: list[OrthoPoint] = field(default_factory=list)
    trace: list[float] = field(default_factory=list)
    cycles_used: int = 0


def basin_hop(
    p: DirectedProblem,
    v0: OrthoPoint | np.ndarray,
    sched: GdSchedule = FRESH,
    k: int = 20,
    seed: int = 0,
    tau: tuple[float, float] = (0.5, 0.8),
) -> SearchResult:
    """Single-threaded basin hopping: perturb the incumbent, refine, keep if better."""
    start = v0.v if isinstance(v0, OrthoPoint) else np.asarray(v0, dtype=float)
    best = OrthoPoint(start.copy(), objective_j(p, start), "init")
    trace = []
    for cycle in range(1, k + 1):
        # same stream as slot 0 of the candidate-set variant
        rng = derive(seed, cycle, 0)
        trial = geodesic_sample(best, tau[0], tau[1], seed=rng)
        trial.seed_tag = f"k{cycle:04d}l000"
        refined = riemann_gd(p, trial, sched)
        if refined.cost < best.cost:
            best = refined
        trace.append(best.cost)
    return SearchResult(best, [best], trace, k)


def initial_candidates(n: int, count: int, seed: int) -> list[OrthoPoint]:
    return [
        OrthoPoint(random_orthogonal(n, derive(seed, 0, i)).v, None, f"k0000l{i:03d}")
        for i in range(count)
    ]


def _admit(refined: list[OrthoPoint], capacity: int, delta: float) -> list[OrthoPoint]:
    """Greedy diversity filter: ascending cost, admit if farther than ``delta``
    (squared Frobenius) from everything admitted so far."""
    chosen: list[OrthoPoint] = []
    for cand in sorted(refined, key=lambda o: (o.cost, o.seed_tag)):
        if all(np.sum((cand.v - w.v) ** 2) > delta for w in chosen):
            chosen.append(cand)
            if len(chosen) == capacity:
                break
    return chosen


def basin_hop_candidates(
    p: DirectedProblem,
    c0: list[OrthoPoint] | None = None,
    k: int = 20,
    l: int = 8,
    capacity: int = 8,
    seed: int = 0,
    fresh: GdSchedule = FRESH,
    candidate: GdSchedule | None = CANDIDATE,
    tau: tuple[float, float] = (0.5, 0.8),
    delta: tuple[float, float] = (0.5, 0.01),
    workers: int = 1,
) -> SearchResult:
    """Basin hopping over a diversity-filtered candidate set.

    Each cycle perturbs ``l`` uniformly chosen candidates, refines the
    candidates and the perturbations together, and keeps up to ``capacity``
    low-cost, mutually distant points. The diversity threshold drops from
    ``delta[0]`` to ``delta[1]`` after the first cycle that fails to improve
    the best cost. Unrefined starting points (cost None) use the ``fresh``
    schedule, refined candidates the finer ``candidate`` schedule (None keeps
    them unchanged, which with ``l = capacity = 1`` reproduces ``basin_hop``).
    """
    if c0 is None:
        c0 = initial_candidates(p.n, capacity, seed)
    if not c0:
        raise ParameterError("candidate set must be nonempty")
    cands = [replace(c) for c in c0]
    trace: list[float] = []
    stabilized = False
    best_so_far = math.inf
    for cycle in range(1, k + 1):
        samples = []
        for slot in range(l):
            rng = derive(seed, cycle, slot)
            base = cands[int(rng.integers(len(cands)))] if len(cands) > 1 else cands[0]
            s = geodesic_sample(base, tau[0], tau[1], seed=rng)
            s.seed_tag = f"k{cycle:04d}l{slot:03d}"
            samples.append(s)
        if candidate is None:
            # refined candidates are carried over as they are
            keep = [o for o in cands if o.cost is not None]
            pool = [o for o in cands if o.cost is None] + samples
        else:
            keep, pool = [], cands + samples
        scheds = [candidate if o.cost is not None else fresh for o in pool]
        res = refine_many(p, [o.v for o in pool], scheds, workers)
        refined = keep + [OrthoPoint(res.v[i], float(res.cost[i]), o.seed_tag) for i, o in enumerate(pool)]
        cycle_best = min(o.cost for o in refined)
        if cycle_best >= best_so_far:
            stabilized = True
        best_so_far = min(best_so_far, cycle_best)
        cands = _admit(refined, capacity, delta[1] if stabilized else delta[0])
        trace.append(cands[0].cost)
    if k == 0:
        for c in cands:
            if c.cost is None:
                c.cost = objective_j(p, c.v)
    best = min(cands, key=lambda o: (o.cost, o.seed_tag))
    return SearchResult(best, cands, trace, k)


def identify_directed(
    c: CovSpec | np.ndarray,
    alpha: float = 1e-2,
    sigma_e: np.ndarray | None = None,
    budget: str | dict = "desk",
    seed: int = 0,
    workers: int = 1,
    eig_floor: float | None = None,
    **overrides,
) -> tuple[np.ndarray, SearchResult, DirectedProblem]:
    """Build the problem, run candidate-set basin hopping, return the estimate."""
    p = build_directed_problem(c, alpha, sigma_e, eig_floor=eig_floor)
    params = dict(BUDGETS[budget]) if isinstance(budget, str) else dict(budget)
    params.update(overrides)
    res = basin_hop_candidates(p, seed=seed, workers=workers, **params)
    if p.colored:
        return reconstruct_directed_colored(p, res.best), res, p
    return reconstruct_directed(p, res.best), res, p
