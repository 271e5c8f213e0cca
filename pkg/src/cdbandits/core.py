"""Preference matrices, policies, policy classes and policy mixtures."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

SKEW_TOL = 1e-12
SIMPLEX_TOL = 1e-9


class DuelError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(DuelError, ValueError):
    pass


class RangeViolation(DuelError, ValueError):
    def __init__(self, a: int, b: int, value: float):
        super().__init__(f"entry ({a}, {b}) = {value!r} lies outside [-1, 1]")
        self.a, self.b, self.value = a, b, value


class SkewSymmetryViolation(DuelError, ValueError):
    def __init__(self, a: int, b: int):
        super().__init__(f"entries ({a}, {b}) and ({b}, {a}) are not negatives of each other")
        self.a, self.b = a, b


class EmptyMixture(DuelError, ValueError):
    pass


class NegativeWeight(DuelError, ValueError):
    pass


class NonConvergence(DuelError, RuntimeError):
    pass


class ClassTooLarge(DuelError, ValueError):
    pass


class BadParams(DuelError, ValueError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PreferenceMatrix:
    """K x K skew-symmetric matrix of expected duel outcomes.

    Build through :func:`validate_preference_matrix`; the lower triangle is
    always derived from the upper one so skew-symmetry holds exactly.
    """

    entries: np.ndarray

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, ab):
        return self.entries[ab]

    def __eq__(self, other):
        if not isinstance(other, PreferenceMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def to_json(self) -> dict:
        return {"k": self.k, "entries": self.entries.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> PreferenceMatrix:
        P = validate_preference_matrix(obj["entries"])
        if "k" in obj and int(obj["k"]) != P.k:
            raise DimensionMismatch(f"declared k={obj['k']} but matrix is {P.k}x{P.k}")
        return P


def validate_preference_matrix(entries) -> PreferenceMatrix:
    P = np.array(entries, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {P.shape}")
    bad = np.argwhere(~((P >= -1.0) & (P <= 1.0)))
    if len(bad):
        a, b = map(int, bad[0])
        raise RangeViolation(a, b, float(P[a, b]))
    bad = np.argwhere(np.abs(P + P.T) > SKEW_TOL)
    if len(bad):
        a, b = map(int, bad[0])
        raise SkewSymmetryViolation(a, b)
    upper = np.triu(P, k=1)
    return PreferenceMatrix(_readonly(upper - upper.T))


def as_simplex(weights, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate a probability vector and return it as a read-only float array."""
    w = np.array(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise DimensionMismatch(f"expected a non-empty vector, got shape {w.shape}")
    if np.any(w < 0):
        raise NegativeWeight(f"negative weight {w.min()!r}")
    if abs(w.sum() - 1.0) > tol:
        raise BadParams(f"weights sum to {w.sum()!r}, not 1")
    return _readonly(w)


@dataclass(frozen=True)
class Policy:
    """Deterministic map from context index to action."""

    actions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if not self.actions or min(self.actions) < 0:
            raise BadParams(f"policy {self.actions} needs at least one context and non-negative actions")

    def __call__(self, context: int) -> int:
        return self.actions[context]

    def __len__(self) -> int:
        return len(self.actions)

    def onehot(self, k: int) -> np.ndarray:
        table = np.zeros((len(self.actions), k))
        table[np.arange(len(self.actions)), self.actions] = 1.0
        return table


class PolicyClass:
    """A finite set of policies over ``n_contexts`` contexts and ``k`` actions."""

    n_contexts: int
    k: int

    @property
    def size(self) -> int:
        raise NotImplementedError

    @property
    def log_size(self) -> float:
        raise NotImplementedError

    def policies(self) -> Iterator[Policy]:
        raise NotImplementedError

    def action_table(self, cap: int | None = None) -> np.ndarray:
        """All policies as an (|Pi|, C) integer array, in enumeration order."""
        if cap is not None and self.size > cap:
            raise ClassTooLarge(f"|Pi| = {self.size} exceeds the enumeration cap {cap}")
        return np.array([p.actions for p in self.policies()], dtype=np.int64).reshape(
            self.size, self.n_contexts
        )


class TabularClass(PolicyClass):
    """An explicit list of distinct policies."""

    def __init__(self, policies: Sequence[Policy | Sequence[int]], k: int):
        pols = [p if isinstance(p, Policy) else Policy(tuple(p)) for p in policies]
        if not pols:
            raise BadParams("a tabular policy class needs at least one policy")
        c = len(pols[0])
        if any(len(p) != c for p in pols):
            raise DimensionMismatch("policies disagree on the number of contexts")
        if len(set(pols)) != len(pols):
            raise BadParams("tabular policy class contains duplicate policies")
        for p in pols:
            if any(not 0 <= a < k for a in p.actions):
                raise BadParams(f"policy {p.actions} maps outside [0, {k})")
        self._policies = tuple(pols)
        self.n_contexts = c
        self.k = k

    @property
    def size(self) -> int:
        return len(self._policies)

    @property
    def log_size(self) -> float:
        return math.log(self.size)

    def policies(self) -> Iterator[Policy]:
        return iter(self._policies)

    def __getitem__(self, i: int) -> Policy:
        return self._policies[i]

    def __repr__(self):
        return f"TabularClass(size={self.size}, n_contexts={self.n_contexts}, k={self.k})"


class FullMappingClass(PolicyClass):
    """Every map from C contexts to K actions; never materialized unless asked."""

    def __init__(self, n_contexts: int, k: int):
        if n_contexts < 1 or k < 1:
            raise BadParams("need at least one context and one action")
        self.n_contexts = n_contexts
        self.k = k

    @property
    def size(self) -> int:
        return self.k**self.n_contexts

    @property
    def log_size(self) -> float:
        return self.n_contexts * math.log(self.k)

    def policies(self) -> Iterator[Policy]:
        for actions in itertools.product(range(self.k), repeat=self.n_contexts):
            yield Policy(actions)

    def index_of(self, policy: Policy) -> int:
        idx = 0
        for a in policy.actions:
            idx = idx * self.k + a
        return idx

    def __repr__(self):
        return f"FullMappingClass(n_contexts={self.n_contexts}, k={self.k})"


@dataclass(frozen=True)
class PolicyMixture:
    """Probability-weighted list of distinct policies."""

    atoms: tuple[tuple[float, Policy], ...]

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.atoms])

    @property
    def support_size(self) -> int:
        return len(self.atoms)

    def marginals(self, k: int) -> np.ndarray:
        """Per-context action distributions, shape (C, k)."""
        table = np.zeros((len(self.atoms[0][1]), k))
        for w, p in self.atoms:
            table[np.arange(len(p)), p.actions] += w
        return table

    def weight_vector(self, policy_class: PolicyClass, cap: int | None = None) -> np.ndarray:
        """Weights laid out in ``policy_class`` enumeration order."""
        index = {tuple(row): i for i, row in enumerate(policy_class.action_table(cap))}
        vec = np.zeros(len(index))
        for w, p in self.atoms:
            if p.actions not in index:
                raise BadParams(f"policy {p.actions} is not a member of {policy_class!r}")
            vec[index[p.actions]] += w
        return vec

    def to_json(self) -> list[dict]:
        return [{"weight": w, "policy": list(p.actions)} for w, p in self.atoms]

    @classmethod
    def from_json(cls, atoms: list[dict]) -> PolicyMixture:
        return mixture_normalize([(a["weight"], Policy(tuple(a["policy"]))) for a in atoms])


@dataclass(frozen=True, eq=False)
class FactoredMixture:
    """Product of independent per-context action distributions.

    Over a FullMapping class every meta-duel is additive across contexts, so a
    mixture is pinned down (for any payoff against M) by its per-context
    marginals; this keeps the representation at C x K.
    """

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 2 or np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise BadParams("factored mixture rows must be probability vectors")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def marginals(self, k: int) -> np.ndarray:
        if self.table.shape[1] != k:
            raise DimensionMismatch(f"mixture has {self.table.shape[1]} actions, expected {k}")
        return self.table

    def weight_vector(self, policy_class: PolicyClass, cap: int | None = None) -> np.ndarray:
        A = policy_class.action_table(cap)
        return np.prod(self.table[np.arange(A.shape[1]), A], axis=1)

    def to_mixture(self, cap: int | None = None, drop_below: float = 1e-12) -> PolicyMixture:
        c, k = self.table.shape
        cls = FullMappingClass(c, k)
        w = self.weight_vector(cls, cap)
        return mixture_normalize(
            ((wi, p) for wi, p in zip(w, cls.policies()) if wi > 0), drop_below=drop_below
        )

    def to_json(self) -> dict:
        return {"marginals": self.table.tolist()}


def mixture_normalize(atoms: Iterable[tuple[float, Policy]], drop_below: float = 0.0) -> PolicyMixture:
    """Merge duplicate policies, drop zero weights and rescale to sum one.

    Merged atoms keep the order in which each policy first appears.
    """
    merged: dict[Policy, float] = {}
    for w, p in atoms:
        w = float(w)
        if w < 0:
            raise NegativeWeight(f"negative weight {w!r} on policy {p.actions}")
        merged[p] = merged.get(p, 0.0) + w
    total = sum(merged.values())
    if not merged or total <= 0:
        raise EmptyMixture("mixture has no positive weight")
    kept = [(w / total, p) for p, w in merged.items() if w / total > drop_below]
    total = sum(w for w, _ in kept)
    return PolicyMixture(tuple((w / total, p) for w, p in kept))


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _dump(obj, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(k)}: {_dump(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_dump(v) for v in obj) + "]"
        items = [f"{pad}  {_dump(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"cannot serialize non-finite float {x!r}")
        return format_float(x)
    return json.dumps(obj)


def dumps(obj) -> str:
    """JSON text with floats written to 17 significant digits."""
    return _dump(obj) + "\n"


def write_preference_matrix(P: PreferenceMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(P.to_json()))


def read_preference_matrix(path) -> PreferenceMatrix:
    with open(path, encoding="utf-8") as fh:
        return PreferenceMatrix.from_json(json.load(fh))
