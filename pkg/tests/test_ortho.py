import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from covmatch.errors import BranchAmbiguityError, InputError, ParameterError, ParityError, RankDeficiencyError
from covmatch.ortho import (
    SMALL_STEP,
    EigenPair,
    evd_sym,
    expm_small,
    geodesic_sample,
    ortho_exp,
    ortho_log,
    random_orthogonal,
)

from conftest import random_spd


def _rotation(theta):
    return np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])


def _skew(n, rng, scale=1.0):
    a = rng.standard_normal((n, n)) * scale
    return a - a.T


def test_evd_identity_and_diagonal():
    e = evd_sym(np.eye(3))
    assert np.array_equal(e.lam, np.ones(3))
    e = evd_sym(np.diag([1.0, 4.0]))
    assert np.allclose(e.lam, [4.0, 1.0])
    assert np.allclose(e.u, [[0.0, 1.0], [1.0, 0.0]])
    e = evd_sym(np.diag([4.0, 1.0]))
    assert np.array_equal(e.u, np.eye(2))


@given(st.integers(0, 10_000))
def test_evd_contract(seed):
    c = random_spd(6, np.random.default_rng(seed))
    e = evd_sym(c)
    assert np.all(np.diff(e.lam) <= 0)
    assert np.linalg.norm(e.u.T @ e.u - np.eye(6)) <= 1e-10 * 6
    assert np.linalg.norm((e.u * e.lam) @ e.u.T - c) <= 1e-8 * np.linalg.norm(c)
    top = e.u[np.argmax(np.abs(e.u), axis=0), np.arange(6)]
    assert np.all(top > 0)
    again = evd_sym(c.copy())
    assert again.u.tobytes() == e.u.tobytes() and again.lam.tobytes() == e.lam.tobytes()


def test_evd_rejects_nonfinite_and_floor():
    with pytest.raises(InputError):
        evd_sym(np.array([[1.0, np.nan], [np.nan, 1.0]]))
    e = evd_sym(np.diag([1.0, 1e-20]), eig_floor=1e-6)
    assert e.lam[-1] == 1e-6


def test_rank_deficiency():
    with pytest.raises(RankDeficiencyError):
        EigenPair(np.eye(2), np.array([1.0, 1e-14])).inv_sqrt()


def test_haar_scalar_signs():
    vals = [random_orthogonal(1, s).v[0, 0] for s in range(2000)]
    assert set(vals) == {-1.0, 1.0}
    assert abs(np.mean(vals)) < 3 / math.sqrt(2000)


def test_haar_mean_and_parity():
    rng = np.random.default_rng(0)
    draws = np.stack([random_orthogonal(3, rng).v for _ in range(10_000)])
    sigma = 1 / (math.sqrt(3) * 100)
    assert np.all(np.abs(draws.mean(axis=0)) < 3 * sigma)
    dets = np.linalg.det(draws)
    assert np.any(dets > 0) and np.any(dets < 0)


@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_haar_orthogonality(n, seed):
    q = random_orthogonal(n, seed)
    assert q.residual() <= 1e-10 * n


def test_log_examples():
    assert np.array_equal(ortho_log(np.eye(4)), np.zeros((4, 4)))
    assert np.allclose(ortho_log(_rotation(0.3)), [[0.0, -0.3], [0.3, 0.0]], atol=1e-15)
    with pytest.raises(ParityError):
        ortho_log(np.diag([-1.0, 1.0]))
    with pytest.raises(BranchAmbiguityError):
        ortho_log(np.diag([-1.0, -1.0, 1.0]))


@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_log_exp_round_trip(n, seed):
    u = random_orthogonal(n, seed).v
    if np.linalg.det(u) < 0:
        u[:, 0] = -u[:, 0]
    try:
        l = ortho_log(u)
    except BranchAmbiguityError:
        return
    assert np.linalg.norm(l + l.T) == 0.0
    assert np.linalg.norm(ortho_exp(l).v - u) <= 1e-8 * n
    # principal branch: rotation angles in (-pi, pi]
    assert np.max(np.abs(np.linalg.eigvals(l).imag)) <= math.pi


def test_exp_examples():
    assert np.array_equal(ortho_exp(np.zeros((3, 3))).v, np.eye(3))
    r = ortho_exp(np.array([[0.0, -math.pi / 2], [math.pi / 2, 0.0]])).v
    assert np.allclose(r, [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)
    with pytest.raises(ParameterError):
        ortho_exp(np.ones((2, 2)))


@given(st.integers(0, 10_000), st.floats(0.01, 10.0))
def test_exp_matches_independent_oracles(seed, scale):
    rng = np.random.default_rng(seed)
    l = _skew(6, rng, scale)
    e = ortho_exp(l).v
    # Pade oracle and an eigen-decomposition oracle
    assert np.linalg.norm(e - scipy.linalg.expm(l)) <= 1e-9 * max(1.0, np.linalg.norm(l))
    w, v = np.linalg.eig(l)
    eig_oracle = (v * np.exp(w)) @ np.linalg.inv(v)
    assert np.linalg.norm(e - eig_oracle.real) <= 1e-8
    assert np.linalg.det(e) > 0
    assert np.linalg.norm(ortho_exp(-l).v @ e - np.eye(6)) <= 1e-8 * 6


@given(st.integers(0, 10_000))
def test_small_step_exponential(seed):
    rng = np.random.default_rng(seed)
    x = np.stack([_skew(7, rng) for _ in range(3)])
    x *= SMALL_STEP / np.linalg.norm(x, axis=(1, 2))[:, None, None]
    e = expm_small(x)
    for k in range(3):
        assert np.abs(e[k] - scipy.linalg.expm(x[k])).max() <= 1e-15
        assert np.linalg.norm(e[k].T @ e[k] - np.eye(7)) <= 1e-14


def _positive_draw_seed(n):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        if np.linalg.det(random_orthogonal(n, rng).v) > 0:
            return seed
    raise AssertionError


def test_geodesic_endpoints():
    n = 5
    v = random_orthogonal(n, 99).v
    seed = _positive_draw_seed(n)
    assert np.allclose(geodesic_sample(v, 0.0, 0.0, seed=seed).v, v, atol=1e-15)
    u_raw = random_orthogonal(n, np.random.default_rng(seed)).v
    out = geodesic_sample(v, 1.0, 1.0, seed=seed).v
    assert np.linalg.norm(out - u_raw @ v) <= 1e-10


def test_geodesic_negative_parity_restored():
    n = 4
    for seed in range(100):
        if np.linalg.det(random_orthogonal(n, np.random.default_rng(seed)).v) < 0:
            break
    out = geodesic_sample(np.eye(n), 0.5, 0.8, seed=seed).v
    assert np.linalg.det(out) < 0


def test_geodesic_orthogonality_over_draws():
    rng = np.random.default_rng(2)
    v = random_orthogonal(6, 0).v
    worst = 0.0
    for _ in range(1000):
        v_new = geodesic_sample(v, 0.5, 0.8, seed=rng)
        worst = max(worst, v_new.residual())
    assert worst <= 1e-8 * 6


def test_geodesic_bad_tau():
    with pytest.raises(ParameterError):
        geodesic_sample(np.eye(2), 0.8, 0.5)
