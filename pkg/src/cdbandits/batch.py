"""Uniform exploration, unbiased estimators, the block game and classification oracles."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import (
    BadParams,
    DimensionMismatch,
    FullMappingClass,
    Policy,
    PolicyClass,
    TabularClass,
)
from .env import ContextualEnvironment, DuelRecord, duels, sample_contexts


@dataclass(frozen=True, eq=False)
class ExplorationLog:
    """m exploration duels plus the (L, V) bounds of their estimator entries."""

    k: int
    n_contexts: int
    contexts: np.ndarray
    a: np.ndarray
    b: np.ndarray
    r: np.ndarray
    L: float
    V: float

    def __post_init__(self):
        m = len(self.contexts)
        if m < 1 or any(len(x) != m for x in (self.a, self.b, self.r)):
            raise DimensionMismatch("log columns must be non-empty and of equal length")
        for name in ("contexts", "a", "b", "r"):
            arr = np.array(getattr(self, name), dtype=np.int8 if name == "r" else np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(np.isin(self.r, (-1, 1))):
            raise BadParams("outcomes must be -1 or +1")
        if self.a.min() < 0 or self.b.min() < 0 or max(self.a.max(), self.b.max()) >= self.k:
            raise BadParams("logged actions out of range")
        if self.contexts.min() < 0 or self.contexts.max() >= self.n_contexts:
            raise BadParams("logged context out of range")

    @property
    def m(self) -> int:
        return len(self.contexts)

    @property
    def context_counts(self) -> np.ndarray:
        return np.bincount(self.contexts, minlength=self.n_contexts)

    def records(self) -> Iterator[DuelRecord]:
        for i in range(self.m):
            yield DuelRecord(i, int(self.contexts[i]), int(self.a[i]), int(self.b[i]), int(self.r[i]))

    def header(self) -> dict:
        return {"k": self.k, "n_contexts": self.n_contexts, "m": self.m, "L": self.L, "V": self.V}

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(self.header()) + "\n")
            for rec in self.records():
                fh.write(json.dumps({"i": rec.round, "context": rec.context, "a": rec.a, "b": rec.b, "r": rec.r}) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> ExplorationLog:
        with open(path, encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or "k" not in lines[0]:
            raise BadParams(f"{path}: first line must be the log header with k and n_contexts")
        head, recs = lines[0], lines[1:]
        if [rec["i"] for rec in recs] != list(range(len(recs))):
            raise BadParams(f"{path}: records are not numbered 0..m-1 in order")
        return cls(
            int(head["k"]),
            int(head["n_contexts"]),
            np.array([rec["context"] for rec in recs]),
            np.array([rec["a"] for rec in recs]),
            np.array([rec["b"] for rec in recs]),
            np.array([rec["r"] for rec in recs]),
            float(head["L"]),
            float(head["V"]),
        )


def explore_uniform(env: ContextualEnvironment, m: int, rng: np.random.Generator) -> ExplorationLog:
    """m rounds of uniform exploration over all K^2 ordered pairs, self-pairs included."""
    if m < 1:
        raise BadParams("exploration needs m >= 1")
    k = env.k
    contexts = sample_contexts(env, m, rng)
    pairs = rng.integers(0, k * k, size=m)
    a, b = pairs // k, pairs % k
    r = duels(env, contexts, a, b, rng)
    return ExplorationLog(k, env.n_contexts, contexts, a, b, r, float(k * k), float(k * k))


@dataclass(frozen=True, eq=False)
class BlockGame:
    """Block-diagonal mK x mK matrix whose i-th block has one entry, K^2 r_i at (a_i, b_i).

    Vectors over rounds x actions are (m, K) arrays; flat mK vectors are
    accepted and reshaped.
    """

    log: ExplorationLog
    values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vals = self.log.k**2 * self.log.r.astype(float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return self.log.m

    @property
    def k(self) -> int:
        return self.log.k

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m * self.k, self.m * self.k)

    def _as_blocks(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape == (self.m * self.k,):
            u = u.reshape(self.m, self.k)
        if u.shape != (self.m, self.k):
            raise DimensionMismatch(f"expected an ({self.m}, {self.k}) vector, got {u.shape}")
        return u

    def block(self, i: int) -> np.ndarray:
        out = np.zeros((self.k, self.k))
        out[self.log.a[i], self.log.b[i]] = self.values[i]
        return out

    def dense(self) -> np.ndarray:
        """Materialize B; for tests on tiny logs only."""
        m, k = self.m, self.k
        B = np.zeros((m * k, m * k))
        rows = np.arange(m) * k + self.log.a
        cols = np.arange(m) * k + self.log.b
        B[rows, cols] = self.values
        return B

    def apply(self, u) -> np.ndarray:
        """B u, one multiply per block."""
        u = self._as_blocks(u)
        idx = np.arange(self.m)
        out = np.zeros((self.m, self.k))
        out[idx, self.log.a] = self.values * u[idx, self.log.b]
        return out

    def apply_t(self, w) -> np.ndarray:
        """B^T w."""
        w = self._as_blocks(w)
        idx = np.arange(self.m)
        out = np.zeros((self.m, self.k))
        out[idx, self.log.b] = self.values * w[idx, self.log.a]
        return out

    def bilinear(self, w, u) -> float:
        w, u = self._as_blocks(w), self._as_blocks(u)
        idx = np.arange(self.m)
        return float(np.sum(self.values * w[idx, self.log.a] * u[idx, self.log.b]))

    def apply_policy(self, policy: Policy) -> np.ndarray:
        """B v_rho without building v_rho."""
        hit = policy_actions(policy, self.log) == self.log.b
        out = np.zeros((self.m, self.k))
        out[np.arange(self.m), self.log.a] = self.values * hit / math.sqrt(self.m)
        return out

    def apply_t_policy(self, policy: Policy) -> np.ndarray:
        """B^T v_pi without building v_pi."""
        hit = policy_actions(policy, self.log) == self.log.a
        out = np.zeros((self.m, self.k))
        out[np.arange(self.m), self.log.b] = self.values * hit / math.sqrt(self.m)
        return out

    def context_blocks(self) -> np.ndarray:
        """G[s, a, b] = (1/m) sum of estimator entries over rounds with context s."""
        log = self.log
        flat = (log.contexts * log.k + log.a) * log.k + log.b
        G = np.bincount(flat, weights=self.values, minlength=log.n_contexts * log.k * log.k)
        return G.reshape(log.n_contexts, log.k, log.k) / self.m


def estimator_blocks(log: ExplorationLog) -> BlockGame:
    return BlockGame(log)


def policy_actions(policy: Policy, log: ExplorationLog) -> np.ndarray:
    """pi(x_i) for every logged round."""
    return np.asarray(policy.actions, dtype=np.int64)[log.contexts]


@dataclass(frozen=True, eq=False)
class PolicyVector:
    """v_pi: entry (i, a) is 1{pi(x_i) = a} / sqrt(m), stored by its m nonzeros."""

    policy: Policy
    log: ExplorationLog

    @property
    def nonzeros(self) -> np.ndarray:
        return policy_actions(self.policy, self.log)

    def dense(self) -> np.ndarray:
        m = self.log.m
        out = np.zeros((m, self.log.k))
        out[np.arange(m), self.nonzeros] = 1.0 / math.sqrt(m)
        return out


def policy_vector(policy: Policy, log: ExplorationLog) -> PolicyVector:
    return PolicyVector(policy, log)


def mhat_entry(log: ExplorationLog, pi: Policy, rho: Policy) -> float:
    """(1/m) sum_i Phat_i(pi(x_i), rho(x_i)), straight from the log."""
    hit = (policy_actions(pi, log) == log.a) & (policy_actions(rho, log) == log.b)
    return float(log.k**2 * np.sum(log.r[hit], dtype=float) / log.m)


def empirical_meta_matrix(game: BlockGame, policy_class: PolicyClass, cap: int | None = None) -> np.ndarray:
    """Mhat over an enumerable class."""
    A = policy_class.action_table(cap)
    G = game.context_blocks()
    Mhat = np.zeros((len(A), len(A)))
    for s in range(G.shape[0]):
        Mhat += G[s][np.ix_(A[:, s], A[:, s])]
    return Mhat


def payoff_scale(game: BlockGame, policy_class: PolicyClass) -> float:
    """max |v_pi^T B v_rho| over pairs of policies in the class.

    This is the empirical counterpart of the bound |w^T B u| <= L. For a
    FullMapping class the pair can be chosen context by context.
    """
    G = game.context_blocks()
    if isinstance(policy_class, FullMappingClass):
        hi = G.max(axis=(1, 2)).sum()
        lo = G.min(axis=(1, 2)).sum()
        return float(max(abs(hi), abs(lo)))
    return float(np.abs(empirical_meta_matrix(game, policy_class)).max())


class ClassificationOracle:
    """argmin over the policy hull of a linear cost c . w, c given as an (m, K) array.

    Costs are summed per context before the search, which is exact because a
    policy sees only the context index of each round. ``best_response`` takes
    such a (C, K) table directly. Every call, through either entry point,
    increments ``calls``.
    """

    def __init__(self, policy_class: PolicyClass, log: ExplorationLog):
        if policy_class.k != log.k or policy_class.n_contexts != log.n_contexts:
            raise DimensionMismatch(f"{policy_class!r} does not match a log with C={log.n_contexts}, K={log.k}")
        self.policy_class = policy_class
        self.log = log
        self.calls = 0
        k = log.k
        self._flat = (log.contexts[:, None] * k + np.arange(k)[None, :]).ravel()

    def aggregate(self, cost) -> np.ndarray:
        cost = np.asarray(cost, dtype=float)
        m, k = self.log.m, self.log.k
        if cost.shape == (m * k,):
            cost = cost.reshape(m, k)
        if cost.shape != (m, k):
            raise DimensionMismatch(f"expected an ({m}, {k}) cost vector, got {cost.shape}")
        if self.log.n_contexts == 1:
            return cost.sum(axis=0, keepdims=True)
        table = np.bincount(self._flat, weights=cost.ravel(), minlength=self.log.n_contexts * k)
        return table.reshape(self.log.n_contexts, k)

    def best_response(self, table: np.ndarray) -> Policy:
        self.calls += 1
        return Policy(tuple(self._argmin(np.asarray(table, dtype=float))))

    def _argmin(self, table: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, cost) -> tuple[Policy, PolicyVector]:
        pol = self.best_response(self.aggregate(cost))
        return pol, PolicyVector(pol, self.log)


class EnumerationOracle(ClassificationOracle):
    """Exact scan over a tabular class; ties go to the lowest policy index."""

    def __init__(self, policy_class: TabularClass, log: ExplorationLog):
        super().__init__(policy_class, log)
        self._actions = policy_class.action_table()
        self._cols = np.arange(policy_class.n_contexts)

    def _argmin(self, table):
        costs = table[self._cols, self._actions].sum(axis=1)
        return self._actions[int(np.argmin(costs))]


class FactoredOracle(ClassificationOracle):
    """Per-context argmin for the class of all maps; ties go to the lowest action."""

    def _argmin(self, table):
        return np.argmin(table, axis=1)


def make_oracle(policy_class: PolicyClass, log: ExplorationLog) -> ClassificationOracle:
    if isinstance(policy_class, FullMappingClass):
        return FactoredOracle(policy_class, log)
    if isinstance(policy_class, TabularClass):
        return EnumerationOracle(policy_class, log)
    raise BadParams(f"no oracle for {policy_class!r}")
