"""Acceptance criteria 1-8, one test each.

Every test prints a single ``[acceptance N] PASS|FAIL ...`` line and then
asserts. Run on its own with ``python3 tests/test_acceptance.py``.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest
from oracles import eps_prime

from cdbandits.batch import (
    ExplorationLog,
    empirical_meta_matrix,
    estimator_blocks,
    explore_uniform,
    make_oracle,
    payoff_scale,
)
from cdbandits.cli import main as cli_main
from cdbandits.core import FullMappingClass, Policy, TabularClass, validate_preference_matrix
from cdbandits.env import APPENDIX_B_5ARM, clone_matrix, exact_meta_matrix, make_environment
from cdbandits.online import sparring_exp4p
from cdbandits.pipeline import certify
from cdbandits.rng import stream
from cdbandits.solvers import HullPoint, approx_project, pgd_rounds, projected_gd, sparring_fpl
from cdbandits.winners import borda_scores, copeland_scores, random_walk_winner, solve_von_neumann


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, elapsed):
        with capsys.disabled():
            print(f"\n[acceptance {n}] {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s) {detail}")

    return emit


def test_1_appendix_b_golden(report):
    t0 = time.perf_counter()
    P = validate_preference_matrix(APPENDIX_B_5ARM)
    w = solve_von_neumann(P, 1e-6).strategy
    l1 = float(np.abs(w - [1 / 3, 1 / 3, 1 / 3, 0, 0]).sum())
    strict, _, _ = copeland_scores(P)
    borda = borda_scores(P)
    rw, arm = random_walk_winner(P)
    checks = {
        "vn_l1": l1 <= 1e-4,
        "copeland": strict.tolist() == [2, 2, 2, 3, 1],
        "borda": bool(np.all(np.abs(borda - [0.455, 0.53, 0.53, 0.54, 0.445]) <= 1e-9)),
        "random_walk": bool(np.all(np.abs(rw - [0.198, 0.212, 0.204, 0.217, 0.169]) <= 1e-3)) and arm + 1 == 4,
    }
    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 1
    report(1, ok, f"L1={l1:.2e} checks={checks}", elapsed)
    assert ok


def test_2_clone_suite(report):
    t0 = time.perf_counter()
    P = clone_matrix(5)
    w = solve_von_neumann(P, 1e-6).strategy
    groups = np.array([w[0] + w[1], w[2], w[3]])
    strict, _, _ = copeland_scores(P)
    argmax = set(np.flatnonzero(strict == strict.max()).tolist())
    elapsed = time.perf_counter() - t0
    ok = (
        bool(np.all(np.abs(groups - 1 / 3) <= 1e-3))
        and float(np.abs(w[4:]).max()) <= 1e-6
        and 2 not in argmax
        and elapsed < 1
    )
    report(2, ok, f"groups={np.round(groups, 6).tolist()} rest_max={np.abs(w[4:]).max():.1e} copeland_argmax={argmax}", elapsed)
    assert ok


def test_3_estimator_concentration(report):
    t0 = time.perf_counter()
    env = make_environment("composite", {"parts": [{"q": 0.4, "kind": "cycle"}, {"q": 0.6, "kind": "random_skew", "k": 3}]}, seed=3)
    k = env.k

    # unbiasedness of every estimator entry over 10^5 uniform-exploration samples
    n = 10**5
    log = explore_uniform(env, n, stream(0, "acc3-unbiased"))
    vals = estimator_blocks(log).values
    worst_z = 0.0
    for s, a, b in itertools.product(range(env.n_contexts), range(k), range(k)):
        x = np.where((log.contexts == s) & (log.a == a) & (log.b == b), vals, 0.0)
        mean_target = env.probs[s] * env.stacked[s, a, b]
        worst_z = max(worst_z, abs(x.mean() - mean_target) / (x.std() / math.sqrt(n)))
    unbiased = worst_z <= 3

    # uniform bound |Mhat - M| <= eps' over every policy pair
    cls = FullMappingClass(env.n_contexts, k)
    M = exact_meta_matrix(env, cls)
    delta, m = 0.1, 4000
    bound = eps_prime(k * k, k * k, cls.size, delta, m)
    held = 0
    for rep in range(200):
        lg = explore_uniform(env, m, stream(rep, "acc3-concentration"))
        held += np.abs(empirical_meta_matrix(estimator_blocks(lg), cls) - M).max() <= bound
    elapsed = time.perf_counter() - t0
    ok = unbiased and held >= 180 and elapsed < 30
    report(3, ok, f"worst_z={worst_z:.2f} bound_held={held}/200 eps'={bound:.4f}", elapsed)
    assert ok


def _solver_margins(kind, solver, seeds=range(10), eps=0.25, m=8000):
    env = make_environment(kind)
    cls = FullMappingClass(1, env.k)
    margins = []
    for seed in seeds:
        log = explore_uniform(env, m, stream(seed, "acc4-explore"))
        game, oracle = estimator_blocks(log), make_oracle(cls, log)
        L = payoff_scale(game, cls)
        n = pgd_rounds(L, eps)
        if solver == "fpl":
            rep = sparring_fpl(game, oracle, n, L, stream(seed, "acc4-fpl"))
        else:
            rep = projected_gd(game, oracle, n, n, L)
        margins.append(certify(env, cls, rep.mixture, eps).margin)
    return np.array(margins)


@pytest.mark.slow
def test_4_solver_guarantee(report):
    t0 = time.perf_counter()
    eps = 0.25
    results = {}
    for kind in ("cycle", "appendix_b_5arm"):
        for solver in ("fpl", "pgd"):
            margins = _solver_margins(kind, solver, eps=eps)
            results[f"{kind}/{solver}"] = (int((margins >= -eps).sum()), float(margins.min()))
    elapsed = time.perf_counter() - t0
    ok = all(passed >= 9 for passed, _ in results.values()) and elapsed < 300
    detail = " ".join(f"{k}={p}/10(min {mn:.3f})" for k, (p, mn) in results.items())
    report(4, ok, detail, elapsed)
    assert ok


def _reference_projection(zs, va, vb, n_iter):
    """Vectorized long run of the same averaging scheme on the two-vertex hull.

    Points are tracked by the weight lam on ``va`` (the rest on ``vb``); all
    20 targets advance together.
    """
    v1_lam = np.ones(len(zs))
    d = va - vb
    gap = np.linalg.norm((v1_lam[:, None] * d + vb) - zs, axis=1)
    nu = np.minimum(1.0, gap / math.sqrt(n_iter))
    lam = v1_lam.copy()
    total = np.zeros(len(zs))
    za = zs @ d
    dd, bd = d @ d, vb @ d
    for _ in range(n_iter):
        total += lam
        # vertex minimizing s . (v - z): compare va and vb
        grad = lam * dd + bd - za
        pick_a = grad < 0
        lam = (1 - nu) * lam + nu * pick_a
    return total / n_iter


def test_5_approx_project_contract(report):
    t0 = time.perf_counter()
    m, k = 3, 2
    log = ExplorationLog(k, 1, np.zeros(m, int), np.array([0, 1, 1]), np.array([1, 0, 1]), np.array([1, -1, 1]), 4.0, 4.0)
    cls = FullMappingClass(1, k)
    oracle = make_oracle(cls, log)
    va, vb = (HullPoint.vertex(Policy((a,)), k).dense(log).ravel() for a in range(k))
    v1 = HullPoint.vertex(Policy((0,)), k)
    rng = stream(0, "acc5")
    zs = rng.normal(size=(20, m * k))

    ref_lam = _reference_projection(zs, va, vb, 10**6)
    ref = ref_lam[:, None] * va + (1 - ref_lam[:, None]) * vb
    # closed-form Euclidean projection onto the segment, as a check on the reference
    d = va - vb
    exact_lam = np.clip((zs - vb) @ d / (d @ d), 0, 1)
    ref_err = float(np.abs(ref_lam - exact_lam).max())

    violations, worst = 0, -np.inf
    grid = [lam * va + (1 - lam) * vb for lam in np.linspace(0, 1, 11)]
    for n_inner in (16, 64, 256):
        alpha = 8 / math.sqrt(n_inner)
        for z, r in zip(zs, ref):
            vbar = approx_project(z, v1, n_inner, oracle).dense(log).ravel()
            slack = alpha * np.linalg.norm(v1.dense(log).ravel() - z)
            for s in [va, vb, r, *grid]:
                excess = np.sum((s - vbar) ** 2) - np.sum((s - z) ** 2) - slack
                worst = max(worst, excess)
                violations += excess > 1e-12
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and ref_err <= 8 / math.sqrt(10**6) and elapsed < 60
    report(5, ok, f"violations={violations} worst_excess={worst:.3e} reference_vs_exact={ref_err:.2e}", elapsed)
    assert ok


@pytest.mark.slow
def test_6_online_sublinear(report):
    t0 = time.perf_counter()
    env = make_environment("condorcet", {"k": 3, "gap": 0.5})
    cls = FullMappingClass(1, 3)
    T = 20000
    q = T // 4
    ratios = []
    for seed in range(5):
        cum = sparring_exp4p(env, cls, T, delta=0.05, seed=seed, keep_history=False).transcript.cumulative_regret
        first = cum[q - 1] / q
        last = (cum[-1] - cum[T - q - 1]) / q
        ratios.append(last / first)
    elapsed = time.perf_counter() - t0
    good = sum(r <= 0.5 for r in ratios)
    ok = good >= 4 and elapsed < 120
    report(6, ok, f"last/first quarter ratios={np.round(ratios, 3).tolist()} ({good}/5 <= 0.5)", elapsed)
    assert ok


def test_7_oracle_equivalence(report):
    t0 = time.perf_counter()
    rng = stream(0, "acc7")
    classes = mismatches = beaten = 0
    for k in range(2, 257):
        for c in itertools.count(1):
            if k**c > 256:
                break
            classes += 1
            m = 3 * c + 2
            contexts = np.concatenate([np.arange(c), rng.integers(0, c, m - c)])
            log = ExplorationLog(k, c, contexts, np.zeros(m, int), np.zeros(m, int), np.ones(m, int), k * k, k * k)
            full = FullMappingClass(c, k)
            tab = TabularClass(list(full.policies()), k)
            fac, enum = make_oracle(full, log), make_oracle(tab, log)
            A = full.action_table()
            for _ in range(20):
                cost = rng.normal(size=(m, k))
                p_fac, _ = fac(cost)
                p_enum, _ = enum(cost)
                mismatches += p_fac != p_enum
                # every policy's cost read straight off the per-round cost vector
                all_costs = cost[np.arange(m)[None, :], A[:, contexts]].sum(axis=1)
                mine = cost[np.arange(m), np.array(p_fac.actions)[contexts]].sum()
                beaten += bool(np.any(all_costs < mine - 1e-12))
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and beaten == 0 and elapsed < 10
    report(7, ok, f"classes={classes} mismatches={mismatches} beaten={beaten}", elapsed)
    assert ok


def _cli_stage_outputs(root, capsys):
    root.mkdir()
    d = str(root)

    def run(*argv):
        code = cli_main([str(a) for a in argv])
        capsys.readouterr()
        assert code == 0, argv

    run("make-env", "--kind", "random_skew", "--k", "4", "--seed", "9", "--out-dir", d, "--out", "env.json")
    run("explore", "--env", root / "env.json", "--m", "3000", "--seed", "9", "--out-dir", d, "--out", "log.jsonl")
    run("train-fpl", "--log", root / "log.jsonl", "--seed", "9", "--rounds", "300", "--out-dir", d, "--out", "fpl.json")
    run("train-pgd", "--log", root / "log.jsonl", "--n-out", "40", "--n-in", "40", "--out-dir", d, "--out", "pgd.json")
    run("spar-exp4", "--env", root / "env.json", "--T", "3000", "--seed", "9", "--out-dir", d, "--out", "spar.csv",
        "--mixture-out", "spar.json")
    run("certify", "--env", root / "env.json", "--mixture", root / "fpl.json", "--eps", "0.9", "--out-dir", d,
        "--out", "cert.json")
    cfg = {"env": {"kind": "appendix_b_5arm"}, "algorithm": "fpl", "eps": 0.25, "T": 4000, "m": 3000, "seed": 9}
    (root / "cfg.json").write_text(json.dumps(cfg))
    run("run", "--config", root / "cfg.json", "--out-dir", root / "pipe")
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name != "cfg.json"}


def test_8_determinism(report, tmp_path, capsys):
    t0 = time.perf_counter()
    a = _cli_stage_outputs(tmp_path / "a", capsys)
    b = _cli_stage_outputs(tmp_path / "b", capsys)
    differing = [str(k) for k in a if a[k] != b.get(k)]
    elapsed = time.perf_counter() - t0
    ok = not differing and set(a) == set(b) and len(a) >= 12 and elapsed < 10
    report(8, ok, f"files={len(a)} differing={differing}", elapsed)
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
