"""Sign-vector recovery for undirected graphs.

With ``C = U diag(lam) U^T`` every candidate ``S(q) = I - U diag(q * lam**-0.5) U^T``
reproduces ``C`` exactly; the sign vector ``q`` is chosen to make ``S(q)``
hollow and sparse:

    J(q) = ||W q - 1||^2 + alpha * ||M q - vec(I)||_1

with ``W = (U o U) diag(lam**-0.5)`` and ``M = (U kr U) diag(lam**-0.5)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import BudgetError, InputError, ModelMismatchError, ParameterError
from .ortho import EigenPair, evd_sym
from .sem import CovSpec, SemModel, mixing_matrix, symmetrize

MAX_ENUM_N = 24
# columns of q enumerated together in the inner block (2**_LO_BITS rows)
_LO_BITS = 14
# relative eigen-gap below which the covariance is flagged as degenerate
DEGENERACY_RTOL = 1e-8


@dataclass
class UndirectedProblem:
    w: np.ndarray
    m: np.ndarray
    alpha: float
    basis: np.ndarray
    scale: np.ndarray
    eig: EigenPair
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = self.n
        iu, ju = np.triu_indices(n)
        # S(q) is symmetric, so the l1 term only needs the upper triangle
        self._m_upper = self.basis[iu] * self.basis[ju] * self.scale
        self._eye_upper = (iu == ju).astype(float)
        self._l1_weights = np.where(iu == ju, 1.0, 2.0)

    @property
    def n(self) -> int:
        return self.w.shape[0]


def _khatri_rao_basis(basis: np.ndarray, scale: np.ndarray) -> np.ndarray:
    # rows ordered as column-major vec(S)
    return scipy.linalg.khatri_rao(basis, basis) * scale


def _degenerate(lam: np.ndarray) -> bool:
    gaps = np.abs(np.diff(lam))
    return bool(np.any(gaps <= DEGENERACY_RTOL * np.max(np.abs(lam))))


def build_problem(
    c: CovSpec | np.ndarray, alpha: float = 0.0, eig_floor: float | None = None
) -> UndirectedProblem:
    if alpha < 0:
        raise ParameterError("alpha must be nonnegative")
    eig = evd_sym(c, eig_floor=eig_floor)
    scale = eig.inv_sqrt()
    u = eig.u
    w = (u * u) * scale
    flags = ["degenerate-eigenvalues"] if _degenerate(eig.lam) else []
    return UndirectedProblem(w, _khatri_rao_basis(u, scale), float(alpha), u, scale, eig, flags)


def build_problem_colored(
    c: CovSpec | np.ndarray,
    sigma_e: np.ndarray,
    alpha: float = 0.0,
    eig_floor: float | None = None,
) -> UndirectedProblem:
    """Problem for known, non-white noise covariance ``sigma_e``.

    ``C Sigma_e`` is diagonalized through the symmetric matrix
    ``Sigma_e^(1/2) C Sigma_e^(1/2) = Q diag(lam) Q^T``; with
    ``U_xe = Sigma_e^(-1/2) Q`` the candidates become
    ``S(q) = I - B diag(q * lam**-0.5) B^T`` with ``B = Sigma_e^(1/2) Q``,
    so the same hollowness and sparsity matrices apply with ``B`` in place of ``U``.
    """
    a = c.c if isinstance(c, CovSpec) else np.asarray(c, dtype=float)
    sigma_e = np.asarray(sigma_e, dtype=float)
    if sigma_e.shape != a.shape:
        raise ParameterError("sigma_e shape does not match the covariance")
    evals, evecs = np.linalg.eigh(symmetrize(sigma_e))
    if np.min(evals) <= 0:
        raise ParameterError("sigma_e is not positive definite")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise ModelMismatchError("covariance is not symmetric, C Sigma_e may have complex eigenvalues")
    root = symmetrize((evecs * np.sqrt(evals)) @ evecs.T)
    eig = evd_sym(root @ a @ root, eig_floor=eig_floor)
    scale = eig.inv_sqrt()
    basis = root @ eig.u
    w = (basis * basis) * scale
    flags = ["degenerate-eigenvalues"] if _degenerate(eig.lam) else []
    return UndirectedProblem(w, _khatri_rao_basis(basis, scale), float(alpha), basis, scale, eig, flags)


def reconstruct_undirected(p: UndirectedProblem | EigenPair, q: np.ndarray) -> np.ndarray:
    """``S(q) = I - B diag(q * lam**-0.5) B^T``; the diagonal is left as is."""
    if isinstance(p, EigenPair):
        basis, scale = p.u, p.inv_sqrt()
    else:
        basis, scale = p.basis, p.scale
    q = _as_signs(q, basis.shape[0])
    s = np.eye(basis.shape[0]) - (basis * (q * scale)) @ basis.T
    return symmetrize(s)


def _as_signs(q, n: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (n,) or not np.all(np.abs(q) == 1):
        raise InputError("sign vector must have n entries, each +1 or -1")
    return q


def objective(p: UndirectedProblem, q: np.ndarray) -> float:
    q = _as_signs(q, p.n)
    return float(objective_many(p, q[None, :])[0])


def objective_many(p: UndirectedProblem, qs: np.ndarray) -> np.ndarray:
    """Objective for each row of ``qs``."""
    r = qs @ p.w.T - 1.0
    val = np.einsum("ij,ij->i", r, r)
    if p.alpha > 0:
        t = np.abs(qs @ p._m_upper.T - p._eye_upper)
        val = val + p.alpha * (t @ p._l1_weights)
    return val


def ubqp_value(p: UndirectedProblem, q: np.ndarray) -> float:
    """Hollowness term in expanded quadratic form ``q^T W^T W q - 2 1^T W q + N``."""
    q = _as_signs(q, p.n)
    return float(q @ (p.w.T @ p.w) @ q - 2.0 * np.sum(p.w @ q) + p.n)


def _index_to_signs(k: np.ndarray, n: int) -> np.ndarray:
    # bit (n-1-i) of k set -> q_i = +1; increasing k is lexicographic order with -1 < +1
    bits = (k[:, None] >> np.arange(n - 1, -1, -1)) & 1
    return 2.0 * bits - 1.0


def _enumerate(w: np.ndarray, m_upper, eye_upper, weights, alpha: float):
    """Yield ``(first_index, values)`` over all 2**n sign vectors in lexicographic order.

    Splits q into high and low bits: partial products of the low part are
    tabulated once and shifted by each high-part contribution.
    """
    n = w.shape[0]
    lo = min(n, _LO_BITS)
    hi = n - lo
    q_lo = _index_to_signs(np.arange(2 ** lo), lo)
    r_lo = q_lo @ w[:, hi:].T
    t_lo = q_lo @ m_upper[:, hi:].T if alpha > 0 else None
    for h in range(2 ** hi):
        q_hi = _index_to_signs(np.array([h]), hi)[0] if hi else np.zeros(0)
        r = r_lo + (w[:, :hi] @ q_hi - 1.0)
        val = np.einsum("ij,ij->i", r, r)
        if alpha > 0:
            t = np.abs(t_lo + (m_upper[:, :hi] @ q_hi - eye_upper))
            val += alpha * (t @ weights)
        yield h << lo, val


def solve_exact(p: UndirectedProblem) -> np.ndarray:
    """Global minimizer by exhaustive enumeration; ties go to the
    lexicographically smallest sign vector."""
    n = p.n
    if n > MAX_ENUM_N:
        raise BudgetError(f"exhaustive search limited to N <= {MAX_ENUM_N}, got {n}")
    best_val, best_k = np.inf, 0
    for start, val in _enumerate(p.w, p._m_upper, p._eye_upper, p._l1_weights, p.alpha):
        i = int(np.argmin(val))
        if val[i] < best_val:
            best_val, best_k = float(val[i]), start + i
    return _index_to_signs(np.array([best_k]), n)[0]


# -- branch and bound ------------------------------------------------------

_SWEEPS = 20


class _BnB:
    def __init__(self, p: UndirectedProblem):
        self.p = p
        n = p.n
        self.order = np.argsort(-np.linalg.norm(p.w, axis=0), kind="stable")
        self.w = p.w[:, self.order]
        self.gram = self.w.T @ self.w
        self.m = p._m_upper[:, self.order]
        self.abs_m = np.abs(self.m)
        # suffix sums of |M| columns: slack available from still-free variables
        self.free_abs = np.zeros((n + 1, self.m.shape[0]))
        for d in range(n - 1, -1, -1):
            self.free_abs[d] = self.free_abs[d + 1] + self.abs_m[:, d]
        self.best_val = np.inf
        self.best_q = None
        self.nodes = 0

    def relax(self, depth: int, fixed: np.ndarray, x0: np.ndarray):
        """Box relaxation of the quadratic term with the first ``depth``
        variables fixed. Returns a valid lower bound and the relaxed point."""
        w_f = self.w[:, :depth]
        r0 = w_f @ fixed - 1.0
        g_ff = self.gram[depth:, depth:]
        c = self.w[:, depth:].T @ r0
        x = x0.copy()
        diag = np.diag(g_ff)
        for _ in range(_SWEEPS):
            for j in range(x.size):
                if diag[j] <= 0:
                    continue
                gj = g_ff[j] @ x + c[j]
                x[j] = min(1.0, max(-1.0, x[j] - gj / diag[j]))
        grad = 2.0 * (g_ff @ x + c)
        r = self.w[:, depth:] @ x + r0
        fx = float(r @ r)
        # convexity: f(y) >= f(x) + grad.(y - x) for every y in the box
        lb = fx - float(grad @ x) - float(np.abs(grad).sum())
        return max(lb, 0.0), x

    def l1_bound(self, depth: int, fixed: np.ndarray) -> float:
        if self.p.alpha == 0:
            return 0.0
        t0 = self.m[:, :depth] @ fixed - self.p._eye_upper
        slack = np.maximum(np.abs(t0) - self.free_abs[depth], 0.0)
        return float(slack @ self.p._l1_weights)

    def leaf(self, q_ordered: np.ndarray):
        q = np.empty_like(q_ordered)
        q[self.order] = q_ordered
        val = objective(self.p, q)
        if val < self.best_val or (
            val == self.best_val and tuple(q) < tuple(self.best_q)
        ):
            self.best_val, self.best_q = val, q

    def seed_incumbent(self):
        n = self.p.n
        _, x = self.relax(0, np.zeros(0), np.zeros(n))
        q = np.where(x >= 0, 1.0, -1.0)
        q_orig = np.empty(n)
        q_orig[self.order] = q
        val = objective(self.p, q_orig)
        improved = True
        while improved:
            improved = False
            for i in range(n):
                q_orig[i] = -q_orig[i]
                v = objective(self.p, q_orig)
                if v < val:
                    val, improved = v, True
                else:
                    q_orig[i] = -q_orig[i]
        self.best_val, self.best_q = val, q_orig.copy()

    def run(self) -> np.ndarray:
        n = self.p.n
        self.seed_incumbent()
        # stack entries: (depth, fixed values in branching order, warm start)
        stack = [(0, np.zeros(0), np.zeros(n))]
        while stack:
            depth, fixed, x0 = stack.pop()
            self.nodes += 1
            if depth == n:
                self.leaf(fixed)
                continue
            lb_q, x = self.relax(depth, fixed, x0)
            lb = lb_q + self.p.alpha * self.l1_bound(depth, fixed)
            if lb > self.best_val * (1.0 + 1e-12) + 1e-14:
                continue
            first = 1.0 if x[0] >= 0 else -1.0
            # push the less promising branch first so the promising one is explored first
            for v in (-first, first):
                stack.append((depth + 1, np.append(fixed, v), x[1:]))
        return self.best_q


def solve_bnb(p: UndirectedProblem) -> np.ndarray:
    """Depth-first branch and bound over the same objective as ``solve_exact``."""
    if p.n == 0:
        return np.zeros(0)
    return _BnB(p).run()


def solve(p: UndirectedProblem, method: str = "auto") -> np.ndarray:
    if method == "exact" or (method == "auto" and p.n <= 16):
        return solve_exact(p)
    if method in ("bnb", "auto"):
        return solve_bnb(p)
    raise ParameterError(f"unknown undirected solver {method!r}")


# -- identifiability ---------------------------------------------------------


@dataclass
class IdentifiabilityReport:
    cond_i: bool
    cond_ii: bool
    n_solutions: int

    @property
    def identifiable(self) -> bool:
        return self.cond_i and self.cond_ii


def identifiability_check(
    s: np.ndarray, pair_tol: float = 1e-9, residual_tol: float = 1e-6
) -> IdentifiabilityReport:
    """Check (i) no two eigenvalues of H = (I - S)^-1 are negatives of each
    other and (ii) the binary system (U o U) diag(|lam|^-1) q = 1 has exactly
    one solution."""
    s = np.asarray(getattr(s, "entries", s), dtype=float)
    n = s.shape[0]
    if not np.allclose(s, s.T, rtol=0, atol=1e-12):
        raise InputError("identifiability check needs a symmetric GSO")
    h = symmetrize(mixing_matrix(SemModel(s)))
    lam, u = np.linalg.eigh(h)
    scale = np.max(np.abs(lam))
    pair_sums = np.abs(lam[:, None] + lam[None, :])
    np.fill_diagonal(pair_sums, np.inf)
    cond_i = bool(np.all(pair_sums > pair_tol * scale))
    if n > MAX_ENUM_N:
        raise BudgetError(f"condition (ii) enumeration limited to N <= {MAX_ENUM_N}")
    k = (u * u) / np.abs(lam)
    count = 0
    for _, val in _enumerate(k, None, None, None, 0.0):
        count += int(np.count_nonzero(val <= residual_tol ** 2))
    return IdentifiabilityReport(cond_i, count == 1, count)


def true_signs(p: UndirectedProblem, s: np.ndarray) -> np.ndarray:
    """Sign vector that reproduces a known symmetric ``s`` in the basis of ``p``.

    Only meaningful for asymptotic covariances with white noise; each basis
    vector's Rayleigh quotient under ``H`` carries the sign.
    """
    h = mixing_matrix(SemModel(np.asarray(s, dtype=float)))
    rq = np.einsum("ij,ij->j", p.basis, h @ p.basis)
    return np.where(rq >= 0, 1.0, -1.0)

