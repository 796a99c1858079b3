import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covmatch._rng import derive
from covmatch.baselines import nse
from covmatch.directed import (
    CANDIDATE,
    FRESH,
    GdSchedule,
    _admit,
    _refine_batch,
    basin_hop,
    basin_hop_candidates,
    build_directed_problem,
    euclidean_grad,
    identify_directed,
    initial_candidates,
    objective_j,
    objective_s,
    reconstruct_directed,
    reconstruct_directed_colored,
    refine_many,
    riemann_gd,
    true_rotation,
)
from covmatch.errors import ParameterError
from covmatch.graphs import gen_cyclic_directed, gen_dag
from covmatch.ortho import OrthoPoint, random_orthogonal
from covmatch.sem import SemModel, asymptotic_cov

from conftest import random_spd

SHORT = GdSchedule(r_max=300, mu_start=2e-2, mu_end=4e-3)


def _dag_problem(n=6, seed=0, alpha=1e-2, sigma_e=None):
    s = gen_dag(n, min(1.0, 2.0 / n + 0.1), seed=seed).entries
    c = asymptotic_cov(SemModel(s, sigma_e)).c
    return s, c, build_directed_problem(c, alpha, sigma_e)


def _zero_rotation(p):
    # the V that reconstructs the empty graph; for C = I it is the eigenvector matrix
    return true_rotation(p, np.zeros((p.n, p.n))).v


def _fd_grad(p, v, h=1e-6):
    g = np.zeros_like(v)
    for i in range(v.shape[0]):
        for j in range(v.shape[1]):
            e = np.zeros_like(v)
            e[i, j] = h
            g[i, j] = (objective_j(p, v + e, smooth=True) - objective_j(p, v - e, smooth=True)) / (2 * h)
    return g


def test_objective_examples():
    p = build_directed_problem(np.eye(4), 0.1)
    assert objective_j(p, _zero_rotation(p)) == 0.0
    s, c, p = _dag_problem()
    v_true = true_rotation(p, s)
    assert v_true.residual() <= 1e-10
    assert np.isclose(objective_j(p, v_true), p.alpha * np.abs(s).sum(), rtol=1e-9)
    assert np.isclose(objective_s(p, s), p.alpha * np.abs(s).sum())
    p0 = build_directed_problem(c, 0.0)
    v = random_orthogonal(6, 3).v
    s_hat = np.eye(6) - v @ np.diag(p0.eig.inv_sqrt()) @ p0.eig.u.T
    assert np.isclose(objective_j(p0, v), np.sum(np.diag(s_hat) ** 2), rtol=1e-12)


def test_problem_validation():
    with pytest.raises(ParameterError):
        build_directed_problem(np.eye(3), -1.0)
    with pytest.raises(ParameterError):
        build_directed_problem(np.eye(3), 0.1, sigma_e=-np.eye(3))


def test_gradient_zero_at_trivial_optimum():
    p = build_directed_problem(np.eye(3), 0.0)
    assert np.array_equal(euclidean_grad(p, _zero_rotation(p)), np.zeros((3, 3)))


def test_gradient_hollowness_term_closed_form():
    _, c, p = _dag_problem(n=3, alpha=0.0)
    v = random_orthogonal(3, 5).v
    s_hat = reconstruct_directed(p, v)
    expected = -2.0 * np.diag(np.diag(s_hat)) @ p.eig.u @ np.diag(p.eig.inv_sqrt())
    assert np.allclose(euclidean_grad(p, v), expected, atol=1e-14)


@given(st.integers(2, 8), st.integers(0, 10_000), st.booleans())
def test_gradient_finite_differences(n, seed, colored):
    rng = np.random.default_rng(seed)
    sigma_e = random_spd(n, rng, cond=3.0) if colored else None
    s = gen_cyclic_directed(n, n, seed=seed).entries if n > 1 else np.zeros((1, 1))
    c = asymptotic_cov(SemModel(s, sigma_e)).c
    # a wide Huber band keeps the finite differences away from kinks
    p = build_directed_problem(c, 0.1, sigma_e, huber_delta=0.5)
    v = random_orthogonal(n, rng).v
    g, fd = euclidean_grad(p, v), _fd_grad(p, v)
    assert np.abs(g - fd).max() <= 1e-5 * max(1.0, np.abs(fd).max())


def test_schedule():
    assert FRESH.step(0) == 2e-2 and np.isclose(FRESH.step(FRESH.r_max - 1), 4e-3)
    assert CANDIDATE.step(0) == 1e-3
    with pytest.raises(ParameterError):
        GdSchedule(mu_start=1e-3, mu_end=1e-2)
    with pytest.raises(ParameterError):
        GdSchedule(r_max=0)


def test_riemann_gd_stationary_start():
    p = build_directed_problem(np.eye(4), 0.0)
    v0 = _zero_rotation(p)
    out = riemann_gd(p, v0, SHORT)
    assert np.array_equal(out.v, v0) and out.cost == 0.0


def test_riemann_gd_monotone_and_on_manifold():
    _, _, p = _dag_problem(seed=1)
    v0 = random_orthogonal(6, 2)
    costs, resid = [], []

    def cb(r, v):
        costs.append(objective_j(p, v))
        resid.append(np.linalg.norm(v.T @ v - np.eye(6)))

    out = riemann_gd(p, v0, SHORT, callback=cb)
    assert out.cost <= objective_j(p, v0) + 1e-9
    assert np.isclose(out.cost, min([objective_j(p, v0)] + costs))
    assert max(resid) <= 1e-8 * 6
    assert len(costs) <= SHORT.r_max


def test_batch_composition_does_not_matter():
    _, _, p = _dag_problem(seed=2)
    starts = np.stack([random_orthogonal(6, k).v for k in range(5)])
    scheds = [SHORT, GdSchedule(r_max=200, mu_start=1e-3, mu_end=2e-4)] * 2 + [SHORT]
    whole = _refine_batch(p, starts, scheds)
    for k in range(5):
        single = _refine_batch(p, starts[k:k + 1], scheds[k:k + 1])
        assert single.v[0].tobytes() == whole.v[k].tobytes()
        assert single.cost[0] == whole.cost[k] and single.iterations[0] == whole.iterations[k]
    for workers in (2, 4, 8):
        split = refine_many(p, list(starts), scheds, workers=workers)
        assert split.v.tobytes() == whole.v.tobytes()


def test_basin_hop_zero_cycles():
    _, _, p = _dag_problem()
    v0 = random_orthogonal(6, 0).v
    res = basin_hop(p, v0, SHORT, k=0)
    assert np.array_equal(res.best.v, v0) and res.trace == []


def test_basin_hop_identity_perturbation_is_one_refinement():
    _, _, p = _dag_problem()
    v0 = random_orthogonal(6, 0).v
    for seed in range(50):
        if np.linalg.det(random_orthogonal(6, derive(seed, 1, 0)).v) > 0:
            break
    res = basin_hop(p, v0, SHORT, k=1, seed=seed, tau=(0.0, 0.0))
    ref = riemann_gd(p, v0, SHORT)
    assert np.array_equal(res.best.v, ref.v) and res.best.cost == ref.cost


def test_basin_hop_trace_non_increasing():
    _, _, p = _dag_problem(seed=3)
    res = basin_hop(p, random_orthogonal(6, 1), SHORT, k=4, seed=2)
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))


def test_single_candidate_reduces_to_basin_hop():
    _, _, p = _dag_problem(seed=4)
    v0 = random_orthogonal(6, 7).v
    ref = basin_hop(p, v0, SHORT, k=4, seed=3)
    c0 = [OrthoPoint(v0, objective_j(p, v0), "init")]
    res = basin_hop_candidates(p, c0, k=4, l=1, capacity=1, seed=3, fresh=SHORT, candidate=None)
    assert res.trace == ref.trace
    assert np.array_equal(res.best.v, ref.best.v)


def test_candidate_set_invariants_and_threads():
    _, _, p = _dag_problem(seed=5)
    kw = dict(k=3, l=4, capacity=4, seed=11, fresh=SHORT,
              candidate=GdSchedule(r_max=100, mu_start=1e-3, mu_end=2e-4))
    ref = basin_hop_candidates(p, **kw)
    assert len(ref.candidates) <= 4
    delta = 0.01
    for a in range(len(ref.candidates)):
        for b in range(a):
            assert np.sum((ref.candidates[a].v - ref.candidates[b].v) ** 2) > delta
    assert all(b <= a for a, b in zip(ref.trace, ref.trace[1:]))
    assert ref.best.cost == min(c.cost for c in ref.candidates)
    for workers in (4, 8):
        other = basin_hop_candidates(p, workers=workers, **kw)
        assert other.best.v.tobytes() == ref.best.v.tobytes() and other.trace == ref.trace


def test_admission_rule():
    pts = [OrthoPoint(np.eye(2), 1.0, "a"), OrthoPoint(np.eye(2) * 1.01, 0.5, "b"),
           OrthoPoint(-np.eye(2), 2.0, "c")]
    chosen = _admit(pts, 3, 0.5)
    assert [o.seed_tag for o in chosen] == ["b", "c"]
    assert [o.seed_tag for o in _admit(pts, 1, 0.5)] == ["b"]


def test_initial_candidates_tags():
    c0 = initial_candidates(4, 3, seed=1)
    assert [o.seed_tag for o in c0] == ["k0000l000", "k0000l001", "k0000l002"]
    assert all(o.cost is None and o.residual() < 1e-12 for o in c0)


def test_reconstruction_examples():
    p = build_directed_problem(np.eye(3), 0.1)
    assert np.array_equal(reconstruct_directed(p, _zero_rotation(p)), np.zeros((3, 3)))
    s, c, p = _dag_problem(seed=6)
    v = true_rotation(p, s)
    assert np.linalg.norm(reconstruct_directed(p, v) - s) <= 1e-8 * np.linalg.norm(s)


@given(st.integers(2, 10), st.integers(0, 10_000), st.booleans())
def test_feasibility_identity(n, seed, colored):
    rng = np.random.default_rng(seed)
    sigma_e = random_spd(n, rng, cond=5.0) if colored else np.eye(n)
    c = random_spd(n, rng, cond=20.0)
    p = build_directed_problem(c, 0.1, sigma_e if colored else None)
    v = random_orthogonal(n, rng).v
    s_hat = reconstruct_directed_colored(p, v) if colored else reconstruct_directed(p, v)
    h = np.linalg.inv(np.eye(n) - s_hat)
    assert np.linalg.norm(h @ sigma_e @ h.T - c) <= 1e-8 * np.linalg.norm(c)


def test_colored_examples():
    p = build_directed_problem(np.eye(3), 0.1, sigma_e=np.eye(3))
    assert np.allclose(reconstruct_directed_colored(p, _zero_rotation(p)), 0.0, atol=1e-15)
    sigma_e = np.diag([2.0, 1.0, 0.5])
    s = np.array([[0.0, 0.0, 0.0], [0.7, 0.0, 0.0], [0.0, -1.2, 0.0]])
    c = asymptotic_cov(SemModel(s, sigma_e)).c
    p = build_directed_problem(c, 0.1, sigma_e)
    v = true_rotation(p, s)
    assert v.residual() <= 1e-10
    assert np.linalg.norm(reconstruct_directed_colored(p, v) - s) <= 1e-8 * np.linalg.norm(s)
    with pytest.raises(ParameterError):
        reconstruct_directed_colored(build_directed_problem(c, 0.1), v)


def test_identify_small_dag():
    s, c, _ = _dag_problem(n=5, seed=8)
    s_hat, res, p = identify_directed(c, 1e-2, budget={"k": 8, "l": 6, "capacity": 6}, seed=0)
    assert res.cycles_used <= 8
    assert objective_s(p, s_hat) <= objective_s(p, s) + 1e-3
    assert nse(s, s_hat) <= 1e-3
