"""Approximate maxmin solvers for the compact block game over the policy hull."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .batch import BlockGame, ClassificationOracle, ExplorationLog
from .core import BadParams, Policy, PolicyMixture, mixture_normalize

DRIFT_TOL = 1e-9


class HullPoint:
    """Convex combination of policy vectors.

    Atoms map each distinct policy to its weight. The cached ``table`` holds
    the per-context action marginals, from which the dense (m, K) vector is
    ``table[x_i] / sqrt(m)``.
    """

    def __init__(self, atoms: dict[Policy, float], k: int):
        if not atoms:
            raise BadParams("a hull point needs at least one atom")
        self.atoms = dict(atoms)
        self.k = k
        self.table = self._table_from_atoms()

    @classmethod
    def vertex(cls, policy: Policy, k: int) -> HullPoint:
        return cls({policy: 1.0}, k)

    def _table_from_atoms(self) -> np.ndarray:
        c = len(next(iter(self.atoms)))
        table = np.zeros((c, self.k))
        rows = np.arange(c)
        for p, w in self.atoms.items():
            table[rows, p.actions] += w
        return table

    def refresh(self) -> float:
        """Recompute the cache from the atoms; returns the drift that was removed."""
        exact = self._table_from_atoms()
        drift = float(np.abs(exact - self.table).max())
        if drift > 0:
            self.table = exact
        return drift

    def dense(self, log: ExplorationLog) -> np.ndarray:
        return self.table[log.contexts] / math.sqrt(log.m)

    @property
    def weights(self) -> np.ndarray:
        return np.fromiter(self.atoms.values(), dtype=float)

    @property
    def support_size(self) -> int:
        return len(self.atoms)

    def to_mixture(self, drop_below: float = 1e-12) -> PolicyMixture:
        return mixture_normalize(((w, p) for p, w in self.atoms.items()), drop_below=drop_below)


def average(points: list[tuple[float, HullPoint]], k: int) -> HullPoint:
    atoms: dict[Policy, float] = {}
    for c, pt in points:
        for p, w in pt.atoms.items():
            atoms[p] = atoms.get(p, 0.0) + c * w
    return HullPoint(atoms, k)


@dataclass
class SolverReport:
    wbar: HullPoint
    algorithm: str
    iterations: dict
    oracle_calls: int
    params: dict = field(default_factory=dict)

    @property
    def mixture(self) -> PolicyMixture:
        return self.wbar.to_mixture()

    @property
    def support_size(self) -> int:
        return self.mixture.support_size

    def to_json(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "iterations": self.iterations,
            "oracle_calls": self.oracle_calls,
            "params": self.params,
            "support_size": self.support_size,
        }


def fpl_alpha(L: float, n_rounds: int) -> float:
    return math.sqrt(2.0 / (L * L * n_rounds))


def fpl_gamma(L: float, m: int, n_rounds: int, delta: float) -> float:
    """Half the additive gap in the FPL maxmin guarantee."""
    return 2 * L * math.sqrt(2 * m / n_rounds) + 2 * L * math.sqrt(2 * math.log(2 / delta) / n_rounds)


def fpl_rounds(L: float, eps: float, m: int, delta: float) -> int:
    """Smallest N with 2 * gamma <= eps."""
    return math.ceil(32 * L * L * (math.sqrt(m) + math.sqrt(math.log(2 / delta))) ** 2 / eps**2)


def pgd_rounds(L: float, eps: float) -> int:
    """N_in = N_out = ceil(36 L^2 / eps^2), which makes 2L/sqrt(N_out) + 4L/sqrt(N_in) <= eps."""
    return math.ceil(36 * L * L / eps**2)


def pgd_eps(L: float, n_out: int, n_in: int) -> float:
    return 2 * L / math.sqrt(n_out) + L * (8 / math.sqrt(n_in)) / 2


def sparring_fpl(
    game: BlockGame,
    oracle: ClassificationOracle,
    n_rounds: int,
    L: float,
    rng: np.random.Generator,
) -> SolverReport:
    """Two Follow-the-Perturbed-Leader copies sparring on the block game.

    Each round both players draw fresh perturbations uniform in [0, 1/alpha]
    and best-respond to the other's cumulative play so far; the row player's
    average is returned.
    """
    if n_rounds < 1 or L <= 0:
        raise BadParams("need n_rounds >= 1 and L > 0")
    log = game.log
    m, k = game.m, game.k
    alpha = fpl_alpha(L, n_rounds)
    calls0 = oracle.calls
    row_loss = np.zeros((m, k))  # B (u_1 + ... + u_{t-1})
    col_loss = np.zeros((m, k))  # B^T (w_1 + ... + w_{t-1})
    counts: dict[Policy, int] = {}
    for _ in range(n_rounds):
        p = rng.uniform(0.0, 1.0 / alpha, size=(m, k))
        q = rng.uniform(0.0, 1.0 / alpha, size=(m, k))
        w, _ = oracle(p - row_loss)
        u, _ = oracle(col_loss + q)
        row_loss += game.apply_policy(u)
        col_loss += game.apply_t_policy(w)
        counts[w] = counts.get(w, 0) + 1
    wbar = HullPoint({p: c / n_rounds for p, c in counts.items()}, k)
    return SolverReport(
        wbar,
        "fpl",
        {"N": n_rounds},
        oracle.calls - calls0,
        {"alpha": alpha, "L": L, "m": log.m},
    )


def approx_project(
    z,
    v1: HullPoint,
    n_inner: int,
    oracle: ClassificationOracle,
) -> HullPoint:
    """Approximate Euclidean projection of ``z`` onto the policy hull, started at ``v1``.

    Runs best response for the vertex player against a (1 - nu) / nu
    averaging step, nu = ||z - v1|| / sqrt(N_in) capped at 1, and returns the
    average of v_1 .. v_{N_in}. Returns ``v1`` untouched, with no oracle
    calls, when z == v1.

    Every quantity the loop needs is a per-context sum of z, so after one
    O(mK) pass each step costs O(CK) plus the oracle.
    """
    log = oracle.log
    if n_inner < 1:
        raise BadParams("n_inner must be at least 1")
    z = np.asarray(z, dtype=float).reshape(log.m, log.k)
    gap = float(np.linalg.norm(z - v1.dense(log)))
    if gap == 0.0:
        return v1
    nu = min(1.0, gap / math.sqrt(n_inner))
    sqrt_m = math.sqrt(log.m)
    z_ctx = oracle.aggregate(z)
    n_ctx = log.context_counts[:, None].astype(float)
    rows = np.arange(v1.table.shape[0])

    table = v1.table.copy()
    picks: list[Policy] = []
    for _ in range(n_inner):
        # s . (v_t - z) for a vertex s, summed per context
        s = oracle.best_response(n_ctx * table / sqrt_m - z_ctx)
        picks.append(s)
        table *= 1.0 - nu
        table[rows, s.actions] += nu

    # vbar = (1/N) sum_{t<=N} v_t in closed form over v_1 and s_1 .. s_{N-1}
    decay = (1.0 - nu) ** np.arange(n_inner + 1)
    atoms: dict[Policy, float] = {}
    c1 = decay[:n_inner].sum() / n_inner
    for p, w in v1.atoms.items():
        atoms[p] = c1 * w
    for tau in range(1, n_inner):
        p = picks[tau - 1]
        atoms[p] = atoms.get(p, 0.0) + (1.0 - decay[n_inner - tau]) / n_inner
    return HullPoint({p: w for p, w in atoms.items() if w > 0}, log.k)


def projected_gd(
    game: BlockGame,
    oracle: ClassificationOracle,
    n_out: int,
    n_in: int,
    L: float,
) -> SolverReport:
    """Best-response column player against projected gradient ascent for the row player.

    w_1 is the oracle's answer to the zero cost. The returned point averages
    w_1 .. w_{N_out}.
    """
    if n_out < 1 or n_in < 1 or L <= 0:
        raise BadParams("need n_out, n_in >= 1 and L > 0")
    log = game.log
    k = game.k
    eta = 2.0 / (L * math.sqrt(n_out))
    calls0 = oracle.calls
    w = HullPoint.vertex(oracle.best_response(np.zeros((log.n_contexts, k))), k)
    trail: list[tuple[float, HullPoint]] = []
    projections = 0
    for _ in range(n_out):
        trail.append((1.0 / n_out, w))
        w_dense = w.dense(log)
        u, _ = oracle(game.apply_t(w_dense))
        z = w_dense + eta * game.apply_policy(u)
        nxt = approx_project(z, w, n_in, oracle)
        projections += nxt is not w
        w = nxt
    wbar = average(trail, k)
    return SolverReport(
        wbar,
        "pgd",
        {"N_out": n_out, "N_in": n_in, "projections": projections},
        oracle.calls - calls0,
        {"eta": eta, "alpha": 8 / math.sqrt(n_in), "L": L, "eps_bound": pgd_eps(L, n_out, n_in)},
    )


def hull_margin(game: BlockGame, oracle: ClassificationOracle, w: HullPoint) -> float:
    """min over the hull of w^T B u, found by one best-response call."""
    wd = w.dense(game.log)
    u, uv = oracle(game.apply_t(wd))
    return game.bilinear(wd, uv.dense())
