"""Von Neumann winners and the classical tournament solution concepts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .core import BadParams, NonConvergence, PreferenceMatrix, as_simplex

PRUNE_BELOW = 1e-9


@dataclass(frozen=True)
class GameSolution:
    strategy: np.ndarray
    certified_margin: float
    solver_iterations: int

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.strategy)

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.tolist(),
            "certified_margin": self.certified_margin,
            "solver_iterations": self.solver_iterations,
            "support_size": int(self.support.size),
        }


@dataclass(frozen=True)
class WinnerReport:
    condorcet: int | None
    copeland_strict: np.ndarray
    copeland_weak: np.ndarray
    copeland_net: np.ndarray
    borda: np.ndarray
    random_walk: np.ndarray
    random_walk_winner: int

    def to_json(self) -> dict:
        # action labels are 1-indexed for people; score vectors stay positional
        return {
            "condorcet_arm": None if self.condorcet is None else self.condorcet + 1,
            "copeland_strict": self.copeland_strict.tolist(),
            "copeland_weak": self.copeland_weak.tolist(),
            "copeland_net": self.copeland_net.tolist(),
            "copeland_strict_winners": (np.flatnonzero(self.copeland_strict == self.copeland_strict.max()) + 1).tolist(),
            "borda": self.borda.tolist(),
            "borda_winner_arm": int(np.argmax(self.borda)) + 1,
            "random_walk": self.random_walk.tolist(),
            "random_walk_winner_arm": self.random_walk_winner + 1,
        }


def margin(P: PreferenceMatrix, w) -> float:
    """min_b sum_a w(a) P(a, b): how badly the best reply beats ``w``."""
    return float(np.min(np.asarray(w) @ P.entries))


def _prune(w: np.ndarray) -> np.ndarray:
    w = np.where(w < PRUNE_BELOW, 0.0, w)
    return w / w.sum()


def _solve_lp(P: np.ndarray):
    # maximize v subject to w^T P >= v, w in the simplex; variables (w, v)
    k = P.shape[0]
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-P.T, np.ones((k, 1))])
    A_eq = np.hstack([np.ones((1, k)), np.zeros((1, 1))])
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=np.zeros(k),
        A_eq=A_eq,
        b_eq=[1.0],
        bounds=[(0, None)] * k + [(None, None)],
        method="highs",
    )
    if res.status != 0:
        raise NonConvergence(f"LP solver failed: {res.message}")
    return np.clip(res.x[:k], 0.0, None), int(res.nit)


def _solve_mwu(P: np.ndarray, eps_solve: float, max_iterations: int):
    k = P.shape[0]
    if k == 1:
        return np.ones(1), 0
    iters = math.ceil(8 * math.log(k) / eps_solve**2)
    if iters > max_iterations:
        raise NonConvergence(
            f"multiplicative weights needs {iters} iterations for eps={eps_solve}, cap is {max_iterations}"
        )
    step = math.sqrt(math.log(k) / iters)
    row_log = np.zeros(k)
    col_log = np.zeros(k)
    avg = np.zeros(k)
    for _ in range(iters):
        w = np.exp(row_log - row_log.max())
        w /= w.sum()
        u = np.exp(col_log - col_log.max())
        u /= u.sum()
        avg += w
        row_log += step * (P @ u)
        col_log -= step * (w @ P)
    return avg / iters, iters


def solve_von_neumann(
    P: PreferenceMatrix,
    eps_solve: float = 1e-6,
    method: str = "lp",
    max_iterations: int = 10**6,
) -> GameSolution:
    """Maxmin strategy of the symmetric game ``P``.

    ``method="lp"`` solves the game exactly with HiGHS; ``method="mwu"`` runs
    multiplicative-weights self-play for ceil(8 ln K / eps^2) rounds, which is
    only practical for coarse tolerances. Either way the result is certified:
    the returned margin is recomputed from the pruned strategy.
    """
    if eps_solve <= 0:
        raise BadParams("eps_solve must be positive")
    if method == "lp":
        w, nit = _solve_lp(P.entries)
    elif method == "mwu":
        w, nit = _solve_mwu(P.entries, eps_solve, max_iterations)
    else:
        raise BadParams(f"unknown solver method {method!r}")
    w = as_simplex(_prune(w))
    m = margin(P, w)
    if m < -eps_solve:
        raise NonConvergence(f"certified margin {m:.3g} is below -{eps_solve:g}")
    return GameSolution(w, m, nit)


def find_condorcet(P: PreferenceMatrix) -> int | None:
    E = P.entries
    for a in range(P.k):
        if all(E[a, b] > 0 for b in range(P.k) if b != a):
            return a
    return None


def copeland_scores(P: PreferenceMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Strict, weak and net Copeland scores.

    The weak score counts every column j with P(i, j) >= 0, the diagonal
    included, which is the convention that reproduces the duplicated-arm table.
    """
    E = P.entries
    wins = (E > 0).sum(axis=1)
    weak = (E >= 0).sum(axis=1)
    losses = (E < 0).sum(axis=1)
    return wins, weak, wins - losses


def borda_scores(P: PreferenceMatrix) -> np.ndarray:
    return ((P.entries + 1) / 2).sum(axis=1) / P.k


def random_walk_winner(
    P: PreferenceMatrix, tol: float = 1e-10, max_iterations: int = 100_000
) -> tuple[np.ndarray, int]:
    """Stationary distribution of the column-normalized win-probability chain."""
    Q = P.entries / 2 + 0.5
    Q = Q / Q.sum(axis=0, keepdims=True)
    pi = np.full(P.k, 1.0 / P.k)
    for _ in range(max_iterations):
        nxt = Q @ pi
        nxt /= nxt.sum()
        if np.abs(nxt - pi).max() < tol:
            return as_simplex(nxt), int(np.argmax(nxt))
        pi = nxt
    raise NonConvergence(f"power iteration did not settle within {max_iterations} steps")


def winner_report(P: PreferenceMatrix) -> WinnerReport:
    strict, weak, net = copeland_scores(P)
    rw, rw_arm = random_walk_winner(P)
    return WinnerReport(find_condorcet(P), strict, weak, net, borda_scores(P), rw, rw_arm)
