"""Exp4.P with expert advice, SparringEXP4.P, and online-to-batch conversion."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    BadParams,
    DuelError,
    FactoredMixture,
    FullMappingClass,
    PolicyClass,
    PolicyMixture,
    TabularClass,
    mixture_normalize,
)
from .env import ContextualEnvironment, RegretTracker, duel, sample_round
from .rng import stream


class HorizonExceeded(DuelError, RuntimeError):
    pass


class ProbabilityUnderflow(DuelError, ArithmeticError):
    pass


class ShortHorizonWarning(UserWarning):
    pass


def _softmax(logw: np.ndarray, axis=None) -> np.ndarray:
    w = np.exp(logw - logw.max(axis=axis, keepdims=axis is not None))
    return w / w.sum(axis=axis, keepdims=axis is not None)


class Exp4P:
    """Exp4.P over a finite policy class, one learner per player.

    Weights live in log space and are shifted to a zero maximum after every
    update. For a FullMapping class the weights are kept as a C x K table:
    advice and updates both factor over contexts, so the product of
    per-context tables is exactly the weight of each of the K^C policies.

    ``prior`` optionally gives initial (unnormalized) weights per policy for
    tabular classes; it defaults to uniform.
    """

    def __init__(
        self,
        policy_class: PolicyClass,
        horizon: int,
        delta: float = 0.05,
        p_min: float | None = None,
        prior=None,
    ):
        if horizon < 1:
            raise BadParams("horizon must be at least 1")
        if not 0 < delta < 1:
            raise BadParams("delta must lie in (0, 1)")
        self.policy_class = policy_class
        self.k = policy_class.k
        self.horizon = horizon
        self.delta = delta
        log_n = policy_class.log_size
        if p_min is None:
            p_min = math.sqrt(log_n / (self.k * horizon))
            if self.k * p_min > 1:
                warnings.warn(
                    f"horizon {horizon} < K ln|Pi| = {self.k * log_n:.3g}; clamping p_min to 1/K",
                    ShortHorizonWarning,
                    stacklevel=2,
                )
                p_min = 1.0 / self.k
        if not 0 <= p_min <= 1.0 / self.k:
            raise BadParams(f"p_min={p_min} must lie in [0, 1/K]")
        self.p_min = p_min
        self.bonus = math.sqrt((log_n + math.log(1 / delta)) / (self.k * horizon))
        self.round = 0
        self._last: tuple[int, np.ndarray] | None = None

        self.factored = isinstance(policy_class, FullMappingClass)
        if self.factored:
            if prior is not None:
                raise BadParams("priors are only supported for tabular classes")
            self.log_weights = np.zeros((policy_class.n_contexts, self.k))
        else:
            self.actions = policy_class.action_table()
            if prior is None:
                self.log_weights = np.zeros(len(self.actions))
            else:
                prior = np.asarray(prior, dtype=float)
                if prior.shape != (len(self.actions),) or np.any(prior <= 0):
                    raise BadParams("prior must be one positive weight per policy")
                self.log_weights = np.log(prior / prior.max())

    def policy_distribution(self) -> np.ndarray:
        """Current normalized weights: (|Pi|,) for tabular, (C, K) tables for FullMapping."""
        return _softmax(self.log_weights, axis=1 if self.factored else None)

    def advice(self, context: int) -> np.ndarray:
        """Weighted vote sum_pi w(pi) xi_pi(a) / sum_pi w(pi) over actions."""
        if self.factored:
            return _softmax(self.log_weights[context])
        w = _softmax(self.log_weights)
        return np.bincount(self.actions[:, context], weights=w, minlength=self.k)

    def distribution(self, context: int) -> np.ndarray:
        return (1 - self.k * self.p_min) * self.advice(context) + self.p_min

    def act(self, context: int, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        if self.round >= self.horizon:
            raise HorizonExceeded(f"horizon T={self.horizon} already used up")
        p = self.distribution(context)
        a = int(rng.choice(self.k, p=p))
        self._last = (context, p)
        return a, p

    def update(self, context: int, action: int, reward: float) -> None:
        """Feed back a reward in [0, 1] for the action just played."""
        if not 0.0 <= reward <= 1.0:
            raise BadParams(f"reward {reward} is outside [0, 1]")
        if self._last is None or self._last[0] != context:
            raise BadParams("update must follow act() on the same context")
        p = self._last[1]
        if p[action] <= 0 or p[action] < self.p_min * (1 - 1e-12):
            raise ProbabilityUnderflow(f"p({action}) = {p[action]!r} is below p_min = {self.p_min!r}")
        rhat = np.zeros(self.k)
        rhat[action] = reward / p[action]
        inv_p = np.divide(1.0, p, out=np.zeros_like(p), where=p > 0)
        step = (self.p_min / 2) * (rhat + self.bonus * inv_p)
        if self.factored:
            self.log_weights[context] += step
            self.log_weights[context] -= self.log_weights[context].max()
        else:
            self.log_weights += step[self.actions[:, context]]
            self.log_weights -= self.log_weights.max()
        self.round += 1
        self._last = None


@dataclass
class SparringTranscript:
    contexts: np.ndarray
    a: np.ndarray
    b: np.ndarray
    r: np.ndarray
    cumulative_regret: np.ndarray
    hypothetical: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.r)

    def csv_rows(self):
        for t in range(len(self.r)):
            yield (t + 1, int(self.contexts[t]), int(self.a[t]), int(self.b[t]), int(self.r[t]), float(self.cumulative_regret[t]))


@dataclass
class SparringResult:
    transcript: SparringTranscript
    history: np.ndarray | None
    history_sum: np.ndarray
    row: Exp4P
    col: Exp4P


def sparring_exp4p(
    env: ContextualEnvironment,
    policy_class: PolicyClass,
    horizon: int,
    delta: float = 0.05,
    seed: int = 0,
    keep_history: bool = True,
    analysis: bool = False,
) -> SparringResult:
    """Two Exp4.P copies play each other through one real duel per round.

    The row copy earns (r+1)/2 for a_t and the column copy (1-r)/2 for b_t.
    With ``analysis=True`` a full table of hypothetical outcomes R_t(a, b) is
    drawn each round and the realized duel reads R_t(a_t, b_t) from it.
    """
    if horizon < 1:
        raise BadParams("horizon must be at least 1")
    nature, duels_rng = stream(seed, "nature"), stream(seed, "duel")
    row_rng, col_rng = stream(seed, "row"), stream(seed, "col")
    row = Exp4P(policy_class, horizon, delta)
    col = Exp4P(policy_class, horizon, delta)
    tracker = RegretTracker(policy_class)

    ctx = np.zeros(horizon, dtype=np.int64)
    acts_a = np.zeros(horizon, dtype=np.int64)
    acts_b = np.zeros(horizon, dtype=np.int64)
    out = np.zeros(horizon, dtype=np.int8)
    cum = np.zeros(horizon)
    shape = row.log_weights.shape
    history = np.zeros((horizon, *shape)) if keep_history else None
    history_sum = np.zeros(shape)
    hyp = np.zeros((horizon, env.k, env.k), dtype=np.int8) if analysis else None

    for t in range(horizon):
        s = sample_round(env, nature)
        wdist = row.policy_distribution()
        history_sum += wdist
        if history is not None:
            history[t] = wdist
        a, _ = row.act(s, row_rng)
        b, _ = col.act(s, col_rng)
        if analysis:
            prob = (env.stacked[s] + 1) / 2
            table = np.where(duels_rng.random((env.k, env.k)) < prob, 1, -1).astype(np.int8)
            hyp[t] = table
            r = int(table[a, b])
        else:
            r = duel(env, s, a, b, duels_rng)
        row.update(s, a, (r + 1) / 2)
        col.update(s, b, (1 - r) / 2)
        tracker.add(s, env.matrices[s], a, b)
        ctx[t], acts_a[t], acts_b[t], out[t], cum[t] = s, a, b, r, tracker.value

    transcript = SparringTranscript(ctx, acts_a, acts_b, out, cum, hyp)
    return SparringResult(transcript, history, history_sum, row, col)


def online_to_batch(history, policy_class: PolicyClass) -> PolicyMixture | FactoredMixture:
    """Average the row player's per-round policy distributions.

    Tabular histories have shape (m, |Pi|) and give a PolicyMixture.
    FullMapping histories have shape (m, C, K); their average is returned as
    per-context marginals, which agree with the exact average on every entry
    of the meta-matrix.
    """
    h = np.asarray(history, dtype=float)
    if h.shape[0] < 1:
        raise BadParams("online_to_batch needs at least one round")
    mean = h.mean(axis=0)
    if isinstance(policy_class, FullMappingClass):
        mean = mean / mean.sum(axis=1, keepdims=True)
        return FactoredMixture(mean)
    if not isinstance(policy_class, TabularClass):
        raise BadParams(f"unsupported policy class {policy_class!r}")
    return mixture_normalize(zip(mean, policy_class.policies()))
