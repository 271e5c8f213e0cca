import itertools
import math

import numpy as np
import pytest

from oracles import eps_prime, maxmin

from cdbandits.batch import (
    EnumerationOracle,
    ExplorationLog,
    FactoredOracle,
    estimator_blocks,
    empirical_meta_matrix,
    explore_uniform,
    make_oracle,
    mhat_entry,
    payoff_scale,
    policy_vector,
)
from cdbandits.core import DimensionMismatch, FullMappingClass, Policy, TabularClass, validate_preference_matrix
from cdbandits.env import exact_meta_matrix, make_environment, single_context
from cdbandits.rng import stream


def manual_log(k, contexts, a, b, r, n_contexts=None):
    n_contexts = n_contexts or (max(contexts) + 1)
    return ExplorationLog(k, n_contexts, np.array(contexts), np.array(a), np.array(b), np.array(r), k * k, k * k)


def test_explore_uniform_pair_frequencies():
    env = make_environment("cycle")
    env2 = single_context(validate_preference_matrix([[0, 0.2], [-0.2, 0]]))
    n = 10**5
    log = explore_uniform(env2, n, stream(0, "explore"))
    counts = np.bincount(log.a * 2 + log.b, minlength=4) / n
    assert np.all(np.abs(counts - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / n))
    assert log.L == log.V == 4.0
    one = explore_uniform(env, 1, stream(0, "explore"))
    assert one.m == 1 and len(list(one.records())) == 1
    assert explore_uniform(env, 1, stream(0, "explore")).L == 9.0


def test_explore_deterministic(two_context_env):
    a = explore_uniform(two_context_env, 500, stream(3, "explore"))
    b = explore_uniform(two_context_env, 500, stream(3, "explore"))
    for name in ("contexts", "a", "b", "r"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_log_jsonl_roundtrip(tmp_path, two_context_env):
    log = explore_uniform(two_context_env, 50, stream(1, "explore"))
    path = tmp_path / "log.jsonl"
    log.write_jsonl(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 51
    assert '"i": 0' in lines[1] and '"context"' in lines[1]
    back = ExplorationLog.read_jsonl(path)
    for name in ("contexts", "a", "b", "r"):
        assert np.array_equal(getattr(back, name), getattr(log, name))
    assert (back.L, back.V, back.k, back.n_contexts) == (log.L, log.V, log.k, log.n_contexts)


def test_log_validation():
    with pytest.raises(Exception):
        manual_log(2, [0], [0], [1], [0])
    with pytest.raises(Exception):
        manual_log(2, [0], [0], [2], [1])
    with pytest.raises(DimensionMismatch):
        manual_log(2, [0, 0], [0], [1], [1])


def test_block_single_entry():
    log = manual_log(3, [0], [0], [1], [1])
    block = estimator_blocks(log).block(0)
    want = np.zeros((3, 3))
    want[0, 1] = 9
    assert np.array_equal(block, want)


def test_blocks_unbiased_monte_carlo():
    P = validate_preference_matrix([[0, 0.6, -0.3], [-0.6, 0, 0.1], [0.3, -0.1, 0]])
    env = single_context(P)
    n = 20000
    log = explore_uniform(env, n, stream(4, "explore"))
    vals = estimator_blocks(log).values
    for a, b in itertools.product(range(3), repeat=2):
        # each round contributes K^2 r 1{(a_i,b_i)=(a,b)}, whose mean is P(a,b)
        x = np.where((log.a == a) & (log.b == b), vals, 0.0)
        assert abs(x.mean() - P[a, b]) <= 3 * x.std() / math.sqrt(n)


def test_zero_environment_blocks():
    env = single_context(validate_preference_matrix(np.zeros((3, 3))))
    log = explore_uniform(env, 20000, stream(5, "explore"))
    vals = estimator_blocks(log).values
    assert set(np.unique(vals)) <= {-9.0, 9.0}
    assert abs(vals.mean()) <= 3 * 9 / math.sqrt(20000)


def test_apply_against_dense(two_context_env, rng):
    log = explore_uniform(two_context_env, 40, stream(6, "explore"))
    game = estimator_blocks(log)
    B = game.dense()
    u, w = rng.normal(size=(40, 3)), rng.normal(size=(40, 3))
    assert np.allclose(game.apply(u).ravel(), B @ u.ravel(), atol=1e-12)
    assert np.allclose(game.apply_t(w).ravel(), B.T @ w.ravel(), atol=1e-12)
    assert game.bilinear(w, u) == pytest.approx(w.ravel() @ B @ u.ravel(), abs=1e-10)
    pol = Policy((2, 0))
    v = policy_vector(pol, log).dense().ravel()
    assert np.allclose(game.apply_policy(pol).ravel(), B @ v, atol=1e-12)
    assert np.allclose(game.apply_t_policy(pol).ravel(), B.T @ v, atol=1e-12)
    # block-diagonal: nothing couples different rounds
    for i, j in [(0, 1), (3, 17)]:
        assert not B[i * 3 : i * 3 + 3, j * 3 : j * 3 + 3].any()
    with pytest.raises(DimensionMismatch):
        game.apply(np.zeros((39, 3)))


def test_apply_on_logged_column_policy():
    # rho plays the logged b_i in every round
    log = manual_log(3, [0, 1, 0, 1], [0, 2, 1, 1], [2, 1, 2, 1], [1, -1, -1, 1])
    rho = Policy((2, 1))
    out = estimator_blocks(log).apply_policy(rho)
    want = np.zeros((4, 3))
    want[np.arange(4), log.a] = 9 * log.r / 2.0
    assert np.allclose(out, want)


def test_zero_blocks_apply_to_zero():
    log = manual_log(2, [0, 0], [0, 1], [1, 0], [1, 1])
    game = estimator_blocks(log)
    object.__setattr__(game, "values", np.zeros(2))
    assert not game.apply(np.ones((2, 2))).any()


def test_bilinear_equals_mhat(two_context_env, rng):
    log = explore_uniform(two_context_env, 300, stream(7, "explore"))
    game = estimator_blocks(log)
    for _ in range(20):
        pi, rho = Policy(tuple(rng.integers(0, 3, 2))), Policy(tuple(rng.integers(0, 3, 2)))
        vp, vr = policy_vector(pi, log).dense(), policy_vector(rho, log).dense()
        direct = sum(
            9 * int(log.r[i]) for i in range(log.m) if pi(log.contexts[i]) == log.a[i] and rho(log.contexts[i]) == log.b[i]
        ) / log.m
        assert game.bilinear(vp, vr) == pytest.approx(direct, abs=1e-12)
        assert mhat_entry(log, pi, rho) == pytest.approx(direct, abs=1e-12)


def test_mhat_examples():
    log = manual_log(2, [0], [0], [1], [1])
    assert mhat_entry(log, Policy((0,)), Policy((1,))) == 4.0
    log = manual_log(2, [0, 0, 0], [1, 1, 0], [1, 0, 1], [1, -1, 1])
    pi = Policy((1,))
    assert mhat_entry(log, pi, pi) == pytest.approx(4 * 1 / 3)


def test_policy_vector_shape(two_context_env):
    log = explore_uniform(two_context_env, 77, stream(8, "explore"))
    v = policy_vector(Policy((1, 2)), log).dense()
    assert np.count_nonzero(v) == 77
    assert np.allclose(v[v != 0], 1 / math.sqrt(77))
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_empirical_meta_matrix_and_scale(two_context_env):
    log = explore_uniform(two_context_env, 200, stream(9, "explore"))
    game = estimator_blocks(log)
    cls = FullMappingClass(2, 3)
    Mhat = empirical_meta_matrix(game, cls)
    pols = list(cls.policies())
    for i, j in [(0, 0), (1, 7), (8, 3)]:
        assert Mhat[i, j] == pytest.approx(mhat_entry(log, pols[i], pols[j]), abs=1e-12)
    assert payoff_scale(game, cls) == pytest.approx(np.abs(Mhat).max(), abs=1e-12)
    tab = TabularClass(pols[:4], 3)
    assert payoff_scale(game, tab) == pytest.approx(np.abs(Mhat[:4, :4]).max(), abs=1e-12)
    assert np.abs(Mhat).max() <= log.L


def brute_best(policies, log, cost):
    costs = [sum(cost[i, p(log.contexts[i])] for i in range(log.m)) for p in policies]
    return policies[int(np.argmin(costs))], min(costs), costs


def test_enumeration_oracle(two_context_env, rng):
    log = explore_uniform(two_context_env, 60, stream(10, "explore"))
    pols = [Policy(tuple(rng.integers(0, 3, 2))) for _ in range(200)]
    pols = list(dict.fromkeys(pols))
    cls = TabularClass(pols, 3)
    oracle = make_oracle(cls, log)
    assert isinstance(oracle, EnumerationOracle)
    assert oracle(np.zeros((60, 3)))[0] == pols[0]
    for _ in range(10):
        cost = rng.normal(size=(60, 3))
        got, vec = oracle(cost)
        want, best, _ = brute_best(pols, log, cost)
        assert got == want
        assert float(np.sum(vec.dense() * cost)) * math.sqrt(60) == pytest.approx(best)
    single = make_oracle(TabularClass([(1, 1)], 3), log)
    assert single(rng.normal(size=(60, 3)))[0] == Policy((1, 1))
    assert oracle.calls == 11


def test_factored_oracle(two_context_env, rng):
    log = explore_uniform(two_context_env, 60, stream(11, "explore"))
    oracle = make_oracle(FullMappingClass(2, 3), log)
    assert isinstance(oracle, FactoredOracle)
    assert oracle(np.zeros(180))[0] == Policy((0, 0))
    pols = list(FullMappingClass(2, 3).policies())
    for _ in range(100):
        cost = rng.normal(size=(60, 3))
        got, _ = oracle(cost)
        _, best, costs = brute_best(pols, log, cost)
        assert costs[pols.index(got)] <= best + 1e-12


def test_factored_single_context_is_plain_argmin(rng):
    env = make_environment("appendix_b_5arm")
    log = explore_uniform(env, 30, stream(12, "explore"))
    cost = rng.normal(size=(30, 5))
    assert make_oracle(FullMappingClass(1, 5), log)(cost)[0] == Policy((int(np.argmin(cost.sum(axis=0))),))


def test_vertex_payoffs_bounded_by_L(two_context_env, rng):
    log = explore_uniform(two_context_env, 100, stream(13, "explore"))
    game = estimator_blocks(log)
    for _ in range(30):
        w = policy_vector(Policy(tuple(rng.integers(0, 3, 2))), log).dense()
        u = policy_vector(Policy(tuple(rng.integers(0, 3, 2))), log).dense()
        assert abs(game.bilinear(w, u)) <= log.L


def test_lemma1_composition(two_context_env):
    # an exact maxmin point of Mhat certifies at -2 eps' on M whenever
    # every entry of Mhat is within eps' of M
    cls = FullMappingClass(2, 3)
    M = exact_meta_matrix(two_context_env, cls)
    delta, m = 0.1, 4000
    ep = eps_prime(9, 9, cls.size, delta, m)
    checked = 0
    for seed in range(10):
        log = explore_uniform(two_context_env, m, stream(seed, "lemma"))
        Mhat = empirical_meta_matrix(estimator_blocks(log), cls)
        if np.abs(Mhat - M).max() > ep:
            continue
        checked += 1
        value, w = maxmin(Mhat)
        assert np.min(w @ Mhat) >= value - 1e-7
        assert np.min(w @ M) >= -(2 * ep + 1e-7)
    assert checked >= 8
