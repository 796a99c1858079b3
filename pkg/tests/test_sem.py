import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covmatch.errors import ParameterError, SingularityError
from covmatch.graphs import gen_dag, gen_undirected
from covmatch.sem import (
    SemModel,
    asymptotic_cov,
    ml_gradient,
    mixing_matrix,
    sample_cov,
    sample_data,
)

from conftest import random_spd


def test_mixing_matrix_examples():
    assert np.array_equal(mixing_matrix(SemModel(np.zeros((3, 3)))), np.eye(3))
    h = mixing_matrix(SemModel(np.array([[0.0, 0.5], [0.0, 0.0]])))
    assert np.allclose(h, [[1.0, 0.5], [0.0, 1.0]], atol=1e-15)


def test_mixing_matrix_dag_neumann_series():
    s = gen_dag(5, 0.6, seed=2).entries
    series = sum(np.linalg.matrix_power(s, k) for k in range(5))
    assert np.allclose(mixing_matrix(SemModel(s)), series, atol=1e-12)


def test_singular_model():
    with pytest.raises(SingularityError):
        mixing_matrix(SemModel(np.array([[0.0, 1.0], [1.0, 0.0]])))


def test_sample_data_shape_and_determinism():
    m = SemModel(np.zeros((3, 3)))
    x = sample_data(m, 500, seed=4)
    assert x.shape == (3, 500)
    assert np.array_equal(x, sample_data(m, 500, seed=4))
    assert abs(x.mean()) < 0.15 and abs(x.std() - 1.0) < 0.1


def test_sample_data_rejects_bad_noise():
    with pytest.raises(ParameterError):
        sample_data(SemModel(np.zeros((2, 2)), -np.eye(2)), 10)


def test_law_of_large_numbers():
    s = gen_undirected(5, 6, seed=1).entries
    m = SemModel(s, np.diag([1.0, 2.0, 0.5, 1.0, 1.5]))
    c = sample_cov(sample_data(m, 1_000_000, seed=0)).c
    assert np.linalg.norm(c - asymptotic_cov(m).c) < 5e-2


def test_sample_cov_oracles():
    x = np.array([[1.0], [2.0], [-1.0]])
    assert np.allclose(sample_cov(x).c, x @ x.T)
    t = 8
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((t, 3)))
    assert np.allclose(sample_cov(np.sqrt(t) * q.T).c, np.eye(3), atol=1e-12)
    x = np.random.default_rng(1).standard_normal((4, 100))
    brute = sum(np.outer(x[:, k], x[:, k]) for k in range(100)) / 100
    c = sample_cov(x)
    assert np.allclose(c.c, brute, atol=1e-14) and c.t == 100
    assert np.array_equal(c.c, c.c.T)


def test_asymptotic_cov_two_node_closed_form():
    a = 0.5
    c = asymptotic_cov(SemModel(np.array([[0.0, a], [a, 0.0]]))).c
    det = 1 - a * a
    inv = np.array([[1.0, a], [a, 1.0]]) / det
    assert np.allclose(c, inv @ inv, atol=1e-14)
    assert np.array_equal(asymptotic_cov(SemModel(np.zeros((2, 2)))).c, np.eye(2))


@given(st.integers(0, 10_000))
def test_asymptotic_spectrum_undirected(seed):
    s = gen_undirected(5, 6, seed=seed).entries
    c = asymptotic_cov(SemModel(s)).c
    assert np.array_equal(c, c.T)
    lam_s = np.linalg.eigvalsh(s)
    expected = np.sort((1.0 - lam_s) ** -2.0)
    assert np.allclose(np.sort(np.linalg.eigvalsh(c)), expected, rtol=1e-9)


@given(st.integers(0, 10_000))
def test_asymptotic_cov_positive_definite(seed):
    rng = np.random.default_rng(seed)
    s = gen_dag(6, 0.4, seed=seed).entries
    c = asymptotic_cov(SemModel(s, random_spd(6, rng))).c
    assert np.linalg.eigvalsh(c).min() > 0


@given(st.integers(0, 10_000))
def test_ml_gradient_vanishes_at_sample_cov(seed):
    c = random_spd(5, np.random.default_rng(seed))
    assert np.abs(ml_gradient(c, c)).max() <= 1e-10
