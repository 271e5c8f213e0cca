"""Finite-support contextual environments, meta-duels and regret."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import (
    BadParams,
    DimensionMismatch,
    FullMappingClass,
    PolicyClass,
    PreferenceMatrix,
    dumps,
    validate_preference_matrix,
)

META_CAP = 10**4

APPENDIX_B_5ARM = (
    (0.0, 0.5, -0.5, 0.5, -0.95),
    (-0.5, 0.0, 0.5, -0.2, 0.5),
    (0.5, -0.5, 0.0, -0.2, 0.5),
    (-0.5, 0.2, 0.2, 0.0, 0.5),
    (0.95, -0.5, -0.5, -0.5, 0.0),
)


@dataclass(frozen=True)
class DuelRecord:
    round: int
    context: int
    a: int
    b: int
    r: int

    def __post_init__(self):
        if self.r not in (-1, 1):
            raise BadParams(f"duel outcome must be -1 or +1, got {self.r}")


@dataclass(frozen=True, eq=False)
class ContextualEnvironment:
    """Distribution over (context, preference matrix) pairs with finite support."""

    probs: np.ndarray
    matrices: tuple[PreferenceMatrix, ...]
    seed: int = 0
    stacked: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        q = np.array(self.probs, dtype=float)
        if q.ndim != 1 or len(q) != len(self.matrices) or len(q) == 0:
            raise DimensionMismatch("need one probability per context matrix")
        if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
            raise BadParams(f"context probabilities {q.tolist()} are not a distribution")
        ks = {P.k for P in self.matrices}
        if len(ks) != 1:
            raise DimensionMismatch(f"context matrices disagree on K: {sorted(ks)}")
        q.setflags(write=False)
        object.__setattr__(self, "probs", q)
        stacked = np.stack([P.entries for P in self.matrices])
        stacked.setflags(write=False)
        object.__setattr__(self, "stacked", stacked)

    @property
    def k(self) -> int:
        return self.matrices[0].k

    @property
    def n_contexts(self) -> int:
        return len(self.matrices)

    def to_json(self) -> dict:
        return {
            "contexts": [{"q": float(q), "matrix": P.to_json()} for q, P in zip(self.probs, self.matrices)],
            "seed": int(self.seed),
        }

    @classmethod
    def from_json(cls, obj: dict) -> ContextualEnvironment:
        ctx = obj["contexts"]
        return cls(
            np.array([c["q"] for c in ctx], dtype=float),
            tuple(PreferenceMatrix.from_json(c["matrix"]) for c in ctx),
            int(obj.get("seed", 0)),
        )


def single_context(P: PreferenceMatrix, seed: int = 0) -> ContextualEnvironment:
    return ContextualEnvironment(np.ones(1), (P,), seed)


def write_environment(env: ContextualEnvironment, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(env.to_json()))


def read_environment(path) -> ContextualEnvironment:
    with open(path, encoding="utf-8") as fh:
        return ContextualEnvironment.from_json(json.load(fh))


def sample_round(env: ContextualEnvironment, rng: np.random.Generator) -> int:
    """Draw a context index; the matching matrix stays with the environment."""
    if env.n_contexts == 1:
        return 0
    return int(rng.choice(env.n_contexts, p=env.probs))


def sample_contexts(env: ContextualEnvironment, n: int, rng: np.random.Generator) -> np.ndarray:
    if env.n_contexts == 1:
        return np.zeros(n, dtype=np.int64)
    return rng.choice(env.n_contexts, size=n, p=env.probs).astype(np.int64)


def duel(env: ContextualEnvironment, context: int, a: int, b: int, rng: np.random.Generator) -> int:
    """+1 if ``a`` wins, -1 if ``b`` wins; a wins with probability (P(a,b)+1)/2."""
    p = (env.stacked[context, a, b] + 1.0) / 2.0
    return 1 if rng.random() < p else -1


def duels(env, contexts, a, b, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`duel` over aligned arrays."""
    p = (env.stacked[contexts, a, b] + 1.0) / 2.0
    return np.where(rng.random(len(p)) < p, 1, -1).astype(np.int8)


def exact_meta_matrix(env: ContextualEnvironment, policy_class: PolicyClass, cap: int = META_CAP) -> np.ndarray:
    """M(pi, rho) = sum_s q_s P_s(pi(s), rho(s)) over the enumerated class."""
    if policy_class.n_contexts != env.n_contexts or policy_class.k != env.k:
        raise DimensionMismatch(f"{policy_class!r} does not fit an environment with C={env.n_contexts}, K={env.k}")
    A = policy_class.action_table(cap)
    M = np.zeros((len(A), len(A)))
    for s in range(env.n_contexts):
        acts = A[:, s]
        # q * (-x) == -(q * x) in floating point, so M stays exactly skew
        M += env.probs[s] * env.stacked[s][np.ix_(acts, acts)]
    return M


class RegretTracker:
    """Running value of max_pi 1/2 sum_t [P_t(pi(x_t), a_t) + P_t(pi(x_t), b_t)].

    Per-context action advantages are accumulated, so FullMapping classes
    maximize context by context and tabular classes keep one score per policy.
    """

    def __init__(self, policy_class: PolicyClass):
        self.policy_class = policy_class
        self.gains = np.zeros((policy_class.n_contexts, policy_class.k))
        self._factored = isinstance(policy_class, FullMappingClass)
        if self._factored:
            self._best = np.zeros(policy_class.n_contexts)
        else:
            self._actions = policy_class.action_table()
            self._scores = np.zeros(len(self._actions))

    def add(self, context: int, P, a: int, b: int) -> None:
        E = P.entries if isinstance(P, PreferenceMatrix) else np.asarray(P)
        inc = E[:, a] + E[:, b]
        self.gains[context] += inc
        if self._factored:
            self._best[context] = self.gains[context].max()
        else:
            self._scores += inc[self._actions[:, context]]

    @property
    def value(self) -> float:
        if self._factored:
            return float(self._best.sum()) / 2.0
        return float(self._scores.max()) / 2.0


def cumulative_regret(env: ContextualEnvironment, policy_class: PolicyClass, contexts, a, b) -> np.ndarray:
    """Regret after each round of a played sequence, vectorized over rounds."""
    contexts, a, b = (np.asarray(x, dtype=np.int64) for x in (contexts, a, b))
    # inc[t, x] = P_t(x, a_t) + P_t(x, b_t)
    inc = env.stacked[contexts, :, a] + env.stacked[contexts, :, b]
    if isinstance(policy_class, FullMappingClass):
        total = np.zeros(len(contexts))
        for s in range(env.n_contexts):
            gains = np.cumsum(np.where((contexts == s)[:, None], inc, 0.0), axis=0)
            total += gains.max(axis=1)
        return total / 2.0
    A = policy_class.action_table()
    scores = np.cumsum(inc[np.arange(len(contexts))[:, None], A[:, contexts].T], axis=0)
    return scores.max(axis=1) / 2.0


def regret(ledger: Iterable[tuple[int, object, int, int]], policy_class: PolicyClass) -> float:
    """Regret of a played sequence of (context, true matrix, a_t, b_t) rounds."""
    tracker = RegretTracker(policy_class)
    n = 0
    for context, P, a, b in ledger:
        tracker.add(context, P, a, b)
        n += 1
    if n == 0:
        raise BadParams("regret needs at least one round")
    return tracker.value


def _matrix(rows) -> PreferenceMatrix:
    return validate_preference_matrix(rows)


def cycle_matrix(k: int = 3) -> PreferenceMatrix:
    """Regular tournament: i beats the (k-1)/2 actions after it, cyclically."""
    if k < 3 or k % 2 == 0:
        raise BadParams("a cyclic tournament needs an odd k >= 3")
    E = np.zeros((k, k))
    for i in range(k):
        for d in range(1, (k - 1) // 2 + 1):
            j = (i + d) % k
            E[i, j], E[j, i] = 1.0, -1.0
    return _matrix(E)


def condorcet_matrix(k: int = 3, gap: float = 0.5) -> PreferenceMatrix:
    """Total order by index: action a beats every b > a by ``gap``."""
    if k < 1 or not 0 < gap <= 1:
        raise BadParams("condorcet needs k >= 1 and 0 < gap <= 1")
    upper = np.triu(np.full((k, k), float(gap)), k=1)
    return _matrix(upper - upper.T)


def utility_matrix(utilities: Sequence[float]) -> PreferenceMatrix:
    v = np.asarray(utilities, dtype=float)
    if v.ndim != 1 or len(v) < 1:
        raise BadParams("utility needs a non-empty vector")
    return _matrix(np.clip(v[:, None] - v[None, :], -1.0, 1.0))


def random_skew_matrix(k: int, rng: np.random.Generator) -> PreferenceMatrix:
    if k < 1:
        raise BadParams("random_skew needs k >= 1")
    upper = np.triu(rng.uniform(-1.0, 1.0, size=(k, k)), k=1)
    return _matrix(upper - upper.T)


def clone_matrix(k_rest: int = 5) -> PreferenceMatrix:
    """Three-cycle on top of ``k_rest`` tied arms, plus a copy of the first cycle arm.

    Index 0 is the copy, 1..3 the cycle (1 beats 2 beats 3 beats 1), and the
    remaining ``k_rest`` arms tie each other and lose to 0..3 with certainty.
    """
    if k_rest < 1:
        raise BadParams("clone needs at least one non-cycle arm")
    n = k_rest + 4
    E = np.zeros((n, n))
    E[1, 2], E[2, 3], E[3, 1] = 1.0, 1.0, 1.0
    E[0:4, 4:] = 1.0
    E[0, 2], E[3, 0] = 1.0, 1.0
    upper = np.triu(E - E.T, k=1)
    return _matrix(upper - upper.T)


def _build_matrix(kind: str, params: dict, rng: np.random.Generator) -> PreferenceMatrix:
    if kind == "cycle":
        return cycle_matrix(int(params.get("k", 3)))
    if kind == "condorcet":
        return condorcet_matrix(int(params.get("k", 3)), float(params.get("gap", 0.5)))
    if kind == "clone":
        return clone_matrix(int(params.get("k", 5)))
    if kind == "appendix_b_5arm":
        return _matrix(APPENDIX_B_5ARM)
    if kind == "random_skew":
        return random_skew_matrix(int(params.get("k", 3)), rng)
    if kind == "utility":
        if "utilities" not in params:
            raise BadParams("utility needs a 'utilities' vector")
        v = params["utilities"]
        if "k" in params and int(params["k"]) != len(v):
            raise BadParams(f"k={params['k']} but {len(v)} utilities given")
        return utility_matrix(v)
    raise BadParams(f"unknown environment kind {kind!r}")


def make_environment(kind: str, params: dict | None = None, seed: int = 0) -> ContextualEnvironment:
    """Deterministic environment generator.

    ``composite`` takes ``params["parts"]``, a list of ``{"q", "kind", ...}``
    dicts, one per context; every other kind yields a single-context
    environment.
    """
    from .rng import stream

    params = dict(params or {})
    rng = stream(seed, "make-env")
    if kind != "composite":
        return single_context(_build_matrix(kind, params, rng), seed)
    parts = params.get("parts")
    if not parts:
        raise BadParams("composite needs a non-empty 'parts' list")
    probs, mats = [], []
    for part in parts:
        part = dict(part)
        probs.append(float(part.pop("q")))
        sub_kind = part.pop("kind")
        if sub_kind == "composite":
            raise BadParams("composite environments do not nest")
        mats.append(_build_matrix(sub_kind, part, rng))
    try:
        return ContextualEnvironment(np.array(probs), tuple(mats), seed)
    except DimensionMismatch as exc:
        raise BadParams(str(exc)) from exc
