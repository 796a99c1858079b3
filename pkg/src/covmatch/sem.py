"""Linear SEM ``x = S x + e``: simulation and covariances."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import derive
from .errors import InputError, ParameterError, SingularityError
from .graphs import Gso

ASYMPTOTIC = "asymptotic"

# columns per independently seeded RNG block in sample_data
_BLOCK = 4096


def symmetrize(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c + c.T)


@dataclass
class SemModel:
    s: np.ndarray
    sigma_e: np.ndarray | None = None

    def __post_init__(self):
        if isinstance(self.s, Gso):
            self.s = self.s.entries
        self.s = np.asarray(self.s, dtype=float)
        n = self.s.shape[0]
        if self.sigma_e is None:
            self.sigma_e = np.eye(n)
        self.sigma_e = np.asarray(self.sigma_e, dtype=float)
        if self.sigma_e.shape != (n, n):
            raise ParameterError("sigma_e shape does not match S")
        if not np.allclose(self.sigma_e, self.sigma_e.T, rtol=0, atol=1e-12):
            raise ParameterError("sigma_e must be symmetric")

    @property
    def n(self) -> int:
        return self.s.shape[0]


@dataclass
class CovSpec:
    """A covariance together with where it came from: ``sample`` (with the
    sample count ``t``) or ``asymptotic``."""

    c: np.ndarray
    source: str = "sample"
    t: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.c.shape[0]


def mixing_matrix(model: SemModel) -> np.ndarray:
    """``H = (I - S)^-1``."""
    n = model.n
    a = np.eye(n) - model.s
    try:
        h = np.linalg.solve(a, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise SingularityError("I - S is singular") from exc
    if not np.all(np.isfinite(h)) or np.linalg.norm(a @ h - np.eye(n)) > 1e-10 * n:
        raise SingularityError("I - S is numerically singular")
    return h


def _noise_factor(sigma_e: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma_e)
    except np.linalg.LinAlgError as exc:
        raise ParameterError("sigma_e is not positive definite") from exc


def sample_data(model: SemModel, t: int, seed: int = 0) -> np.ndarray:
    """Draw ``t`` observations; returns the N x T data matrix.

    Columns come in fixed blocks, each with its own stream derived from
    ``(seed, block)``, so the result does not depend on how blocks are
    scheduled.
    """
    if t < 1:
        raise ParameterError("need at least one sample")
    chol = _noise_factor(model.sigma_e)
    h = mixing_matrix(model)
    mix = h @ chol
    n = model.n
    x = np.empty((n, t))
    for b, start in enumerate(range(0, t, _BLOCK)):
        stop = min(start + _BLOCK, t)
        z = derive(seed, b).standard_normal((n, stop - start))
        x[:, start:stop] = mix @ z
    return x


def sample_cov(x: np.ndarray) -> CovSpec:
    """``(1/T) X X^T`` without centering."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise InputError("data contain non-finite values")
    t = x.shape[1]
    return CovSpec(symmetrize(x @ x.T / t), "sample", t)


def asymptotic_cov(model: SemModel) -> CovSpec:
    """``H Sigma_e H^T``, the T -> infinity limit of the sample covariance."""
    h = mixing_matrix(model)
    return CovSpec(symmetrize(h @ model.sigma_e @ h.T), ASYMPTOTIC)


def ml_objective(sigma_hat: np.ndarray, c: np.ndarray) -> float:
    """Gaussian negative log-likelihood up to constants."""
    sign, logdet = np.linalg.slogdet(sigma_hat)
    if sign <= 0:
        return np.inf
    return float(logdet + np.trace(np.linalg.solve(sigma_hat, c)))


def ml_gradient(sigma_hat: np.ndarray, c: np.ndarray) -> np.ndarray:
    inv = np.linalg.inv(sigma_hat)
    return inv - inv @ c @ inv
