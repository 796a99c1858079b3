"""Spectral decompositions and utilities on the orthogonal group O(N)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._rng import SeedLike, as_generator
from .errors import (
    BranchAmbiguityError,
    InputError,
    ParameterError,
    ParityError,
    RankDeficiencyError,
)
from .graphs import matrix_to_csv
from .sem import CovSpec, symmetrize

# relative eigenvalue floor below which a covariance counts as rank deficient
EIG_RTOL = 1e-12
# rotation blocks closer than this to pi make the logarithm ambiguous
PI_MARGIN = 1e-6


@dataclass
class EigenPair:
    u: np.ndarray
    lam: np.ndarray

    @property
    def n(self) -> int:
        return self.lam.size

    def inv_sqrt(self) -> np.ndarray:
        """``lam ** -0.5``; raises if any eigenvalue is numerically zero."""
        lmax = float(np.max(self.lam))
        if lmax <= 0 or np.min(self.lam) <= EIG_RTOL * lmax:
            raise RankDeficiencyError(
                f"covariance is rank deficient (min eigenvalue {np.min(self.lam):.3g})"
            )
        return self.lam ** -0.5


@dataclass
class OrthoPoint:
    v: np.ndarray
    cost: float | None = None
    seed_tag: str = ""

    def residual(self) -> float:
        n = self.v.shape[0]
        return float(np.linalg.norm(self.v.T @ self.v - np.eye(n)))

    def to_csv(self) -> str:
        return matrix_to_csv(self.v)


def _fix_signs(u: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive; argmax picks the lowest index on ties
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def evd_sym(c: CovSpec | np.ndarray, eig_floor: float | None = None) -> EigenPair:
    """Eigendecomposition with descending eigenvalues and a fixed sign convention.

    ``eig_floor``, when given, raises every eigenvalue below it to the floor
    (a ridge for small-sample covariances).
    """
    a = c.c if isinstance(c, CovSpec) else np.asarray(c, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InputError("covariance has non-finite entries")
    lam, u = np.linalg.eigh(symmetrize(a))
    lam, u = lam[::-1].copy(), _fix_signs(u[:, ::-1])
    if eig_floor is not None:
        lam = np.maximum(lam, eig_floor)
    return EigenPair(u, lam)


def random_orthogonal(n: int, seed: SeedLike = None) -> OrthoPoint:
    """Haar-distributed orthogonal matrix (QR of a Gaussian matrix, R-diagonal sign fix)."""
    if n < 1:
        raise ParameterError("n must be positive")
    rng = as_generator(seed)
    z = rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return OrthoPoint(q * d)


def ortho_log(u: OrthoPoint | np.ndarray) -> np.ndarray:
    """Principal real logarithm of a rotation, via its real Schur form."""
    a = u.v if isinstance(u, OrthoPoint) else np.asarray(u, dtype=float)
    n = a.shape[0]
    if np.linalg.det(a) <= 0:
        raise ParityError("logarithm needs det(U) > 0")
    t, z = scipy.linalg.schur(a, output="real")
    blk = np.zeros((n, n))
    i = 0
    while i < n:
        if i + 1 < n and t[i + 1, i] != 0.0:
            c = 0.5 * (t[i, i] + t[i + 1, i + 1])
            s = 0.5 * (t[i + 1, i] - t[i, i + 1])
            theta = math.atan2(s, c)
            if abs(theta) > math.pi - PI_MARGIN:
                raise BranchAmbiguityError("rotation by pi has no unique logarithm")
            blk[i, i + 1] = -theta
            blk[i + 1, i] = theta
            i += 2
        else:
            if t[i, i] < 0:
                raise BranchAmbiguityError("eigenvalue -1: logarithm is not unique")
            i += 1
    out = z @ blk @ z.T
    return 0.5 * (out - out.T)


# Taylor degree for ||X||_1 <= 0.25: 0.25**13 / 13! < 1e-18
_TAYLOR_DEG = 12
_TAYLOR_RADIUS = 0.25


def _taylor_exp(x: np.ndarray, deg: int) -> np.ndarray:
    n = x.shape[-1]
    out = np.eye(n) + x / deg
    for k in range(deg - 1, 0, -1):
        out = np.eye(n) + (x @ out) / k
    return out


def ortho_exp(l: np.ndarray) -> OrthoPoint:
    """Matrix exponential of a skew-symmetric matrix (scaling and squaring)."""
    l = np.asarray(l, dtype=float)
    norm = np.linalg.norm(l)
    if np.linalg.norm(l + l.T) > 1e-8 * max(norm, 1e-300):
        raise ParameterError("argument is not skew-symmetric")
    x = 0.5 * (l - l.T)
    n1 = np.abs(x).sum(axis=0).max() if x.size else 0.0
    s = max(0, math.ceil(math.log2(n1 / _TAYLOR_RADIUS))) if n1 > 0 else 0
    e = _taylor_exp(x / 2.0 ** s, _TAYLOR_DEG)
    for _ in range(s):
        e = e @ e
    return OrthoPoint(e)


# Fast batched exponential for the small steps of gradient descent. Members
# are processed with identical arithmetic regardless of what else is in the batch.
SMALL_STEP = 0.02  # 0.02**7 / 7! < 3e-16


def expm_small(x: np.ndarray) -> np.ndarray:
    """Degree-6 Taylor exponential of a stack of skew matrices with
    Frobenius norm at most ``SMALL_STEP``."""
    n = x.shape[-1]
    x2 = x @ x
    x3 = x2 @ x
    head = np.eye(n) + x + x2 / 2.0 + x3 / 6.0
    return head + x3 @ (x / 24.0 + x2 / 120.0 + x3 / 720.0)


def geodesic_sample(
    v: OrthoPoint | np.ndarray,
    tau_min: float = 0.5,
    tau_max: float = 0.8,
    seed: SeedLike = None,
    max_attempts: int = 10,
) -> OrthoPoint:
    """Perturb ``v`` by a random rotation shrunk along its geodesic from I.

    Draws a Haar matrix, moves a fraction tau of the way to it, and keeps its
    O(N) component (the first column flip is undone after the exponential).
    """
    if not (0.0 <= tau_min <= tau_max <= 1.0):
        raise ParameterError("need 0 <= tau_min <= tau_max <= 1")
    base = v.v if isinstance(v, OrthoPoint) else np.asarray(v, dtype=float)
    n = base.shape[0]
    rng = as_generator(seed)
    for _ in range(max_attempts):
        u = random_orthogonal(n, rng).v
        flipped = np.linalg.det(u) < 0
        if flipped:
            u[:, 0] = -u[:, 0]
        try:
            log_u = ortho_log(u)
        except BranchAmbiguityError:
            continue
        tau = rng.uniform(tau_min, tau_max)
        step = ortho_exp(tau * log_u).v
        if flipped:
            step[:, 0] = -step[:, 0]
        return OrthoPoint(step @ base)
    raise BranchAmbiguityError(f"no unambiguous rotation in {max_attempts} draws")
