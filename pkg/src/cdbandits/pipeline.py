"""Certification and the explore / solve / certify / exploit pipeline."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .batch import ExplorationLog, estimator_blocks, explore_uniform, make_oracle, payoff_scale
from .core import (
    BadParams,
    DuelError,
    FactoredMixture,
    FullMappingClass,
    PolicyClass,
    PolicyMixture,
    TabularClass,
    dumps,
    format_float,
)
from .env import (
    META_CAP,
    ContextualEnvironment,
    cumulative_regret,
    duels,
    exact_meta_matrix,
    make_environment,
    read_environment,
    sample_contexts,
    write_environment,
)
from .online import online_to_batch, sparring_exp4p
from .rng import stream
from .solvers import SolverReport, fpl_rounds, pgd_rounds, projected_gd, sparring_fpl

ALGORITHMS = ("spar-exp4", "fpl", "pgd")
MODES = ("explore-then-exploit", "full-explore-exploit")
CSV_COLUMNS = ("round", "context", "a", "b", "r", "cumulative_regret")


class ConfigError(DuelError, ValueError):
    pass


class CertificationFailure(DuelError, RuntimeError):
    pass


Mixture = PolicyMixture | FactoredMixture


@dataclass(frozen=True)
class Certificate:
    margin: float
    eps: float
    passed: bool
    n_policies: int
    mode: str = "enumerated"
    mixture_file: str | None = None

    def to_json(self) -> dict:
        return asdict(self)


def certify(
    env: ContextualEnvironment,
    policy_class: PolicyClass,
    mixture: Mixture,
    eps: float,
    cap: int = META_CAP,
    mixture_file: str | None = None,
) -> Certificate:
    """Exact margin min_rho sum_pi W(pi) M(pi, rho) against every policy in the class.

    Each column's products are sorted before summing, so the margin does not
    depend on the order in which the class enumerates its policies.
    """
    M = exact_meta_matrix(env, policy_class, cap)
    W = mixture.weight_vector(policy_class, cap)
    terms = np.sort(W[:, None] * M, axis=0)
    margin = float(np.min(terms.sum(axis=0)))
    return Certificate(margin, eps, margin >= -eps, len(W), mixture_file=mixture_file)


def policy_class_for(spec, n_contexts: int, k: int, one_indexed: bool = True) -> PolicyClass:
    """``None``/"full" for all maps, or a list of per-context action lists.

    User-supplied lists carry 1-indexed action labels by default.
    """
    if spec is None or spec == "full":
        return FullMappingClass(n_contexts, k)
    if isinstance(spec, dict):
        spec = spec.get("policies")
    shift = 1 if one_indexed else 0
    policies = [tuple(int(a) - shift for a in p) for p in spec]
    if any(len(p) != n_contexts for p in policies):
        raise ConfigError(f"every policy needs one action per context ({n_contexts})")
    try:
        return TabularClass(policies, k)
    except DuelError as exc:
        raise ConfigError(f"bad policy list: {exc}") from exc


def exploration_rounds(k: int, horizon: int, log_class_size: float, delta: float) -> int:
    """ceil(K^{2/3} T^{2/3} Psi^{1/3}) with Psi = ln(|Pi| / delta)."""
    psi = log_class_size + math.log(1 / delta)
    return math.ceil(k ** (2 / 3) * horizon ** (2 / 3) * psi ** (1 / 3))


@dataclass
class ExperimentConfig:
    env: dict | str = field(default_factory=lambda: {"kind": "cycle"})
    algorithm: str = "fpl"
    mode: str = "explore-then-exploit"
    eps: float = 0.25
    delta: float = 0.1
    T: int = 20000
    m: int | None = 8000
    seed: int = 0
    out_dir: str = "run"
    policy_class: object = None
    scale: str = "empirical"
    rounds: int | None = None
    n_out: int | None = None
    n_in: int | None = None

    @classmethod
    def from_json(cls, obj: dict) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**obj)

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not (0 < self.eps < 1 and 0 < self.delta < 1):
            raise ConfigError("eps and delta must lie in (0, 1)")
        if self.T < 1:
            raise ConfigError("T must be positive")
        if self.mode == "explore-then-exploit":
            if self.m is None or self.m < 1:
                raise ConfigError("explore-then-exploit needs a positive m")
            if self.T < self.m:
                raise ConfigError(f"T={self.T} is smaller than the m={self.m} exploration rounds")
        if self.scale not in ("empirical", "theory"):
            raise ConfigError("scale must be 'empirical' or 'theory'")
        if isinstance(self.env, str) and not Path(self.env).is_file():
            raise ConfigError(f"environment file {self.env} does not exist")
        for name in ("rounds", "n_out", "n_in"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be positive")

    def environment(self) -> ContextualEnvironment:
        if isinstance(self.env, str):
            return read_environment(self.env)
        spec = dict(self.env)
        try:
            return make_environment(spec.pop("kind"), spec.pop("params", spec), int(spec.pop("seed", self.seed)))
        except (KeyError, BadParams) as exc:
            raise ConfigError(f"bad environment spec: {exc}") from exc


def solve_log(
    log: ExplorationLog,
    policy_class: PolicyClass,
    algorithm: str,
    eps: float,
    delta: float,
    seed: int,
    scale: str = "empirical",
    rounds: int | None = None,
    n_out: int | None = None,
    n_in: int | None = None,
) -> SolverReport:
    """Run SparringFPL or ProjectedGD on a saved log.

    ``scale="theory"`` takes L from the log (K^2 under uniform exploration);
    ``"empirical"`` uses the largest |v_pi^T B v_rho| over the class, which
    keeps iteration counts at desk scale.
    """
    game = estimator_blocks(log)
    oracle = make_oracle(policy_class, log)
    L = log.L if scale == "theory" else payoff_scale(game, policy_class)
    L = max(L, 1e-12)
    if algorithm == "fpl":
        if rounds is None:
            rounds = pgd_rounds(L, eps) if scale == "empirical" else fpl_rounds(L, eps, log.m, delta)
        report = sparring_fpl(game, oracle, rounds, L, stream(seed, "fpl"))
    elif algorithm == "pgd":
        size = pgd_rounds(L, eps)
        report = projected_gd(game, oracle, n_out or size, n_in or size, L)
    else:
        raise ConfigError(f"unknown solver {algorithm!r}")
    report.params["scale"] = scale
    return report


def write_mixture(path, mixture: Mixture, report: dict, cap: int = META_CAP) -> None:
    body: dict = {}
    if isinstance(mixture, FactoredMixture):
        body["marginals"] = mixture.table.tolist()
        c, k = mixture.table.shape
        if k**c <= cap:
            mixture = mixture.to_mixture(cap)
    if isinstance(mixture, PolicyMixture):
        body["atoms"] = mixture.to_json()
    body["report"] = report
    Path(path).write_text(dumps(body), encoding="utf-8", newline="\n")


def read_mixture(path) -> Mixture:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if "marginals" in obj:
        return FactoredMixture(np.array(obj["marginals"]))
    if "atoms" in obj:
        return PolicyMixture.from_json(obj["atoms"])
    raise BadParams(f"{path} has neither 'atoms' nor 'marginals'")


def write_csv(path, contexts, a, b, r, cum) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for t in range(len(r)):
            fh.write(f"{t + 1},{contexts[t]},{a[t]},{b[t]},{r[t]},{format_float(cum[t])}\n")


def sample_actions(marginals: np.ndarray, contexts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One action per round, drawn from that round's context marginal."""
    cdf = np.cumsum(marginals, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(len(contexts))
    return (u[:, None] >= cdf[contexts]).sum(axis=1).astype(np.int64)


def exploit(env, mixture: Mixture, rounds: int, rng_nature, rng_play):
    """Both duel slots drawn independently from the mixture's action distribution."""
    contexts = sample_contexts(env, rounds, rng_nature)
    marg = mixture.marginals(env.k)
    a = sample_actions(marg, contexts, rng_play)
    b = sample_actions(marg, contexts, rng_play)
    r = duels(env, contexts, a, b, rng_nature)
    return contexts, a, b, r


def run_pipeline(config: ExperimentConfig) -> dict:
    """Explore, solve, certify and exploit; returns the paths written plus a summary."""
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage = "environment"
    try:
        env = config.environment()
        policy_class = policy_class_for(config.policy_class, env.n_contexts, env.k)
        write_environment(env, out / "env.json")

        stage = "explore"
        if config.mode == "full-explore-exploit":
            m = exploration_rounds(env.k, config.T, policy_class.log_size, config.delta)
            if m > config.T:
                raise ConfigError(f"T={config.T} is smaller than the m={m} exploration rounds it implies")
        else:
            m = config.m
        if config.algorithm == "spar-exp4":
            res = sparring_exp4p(env, policy_class, m, config.delta, seed=config.seed, keep_history=False)
            tr = res.transcript
            ctx, a, b, r = tr.contexts, tr.a, tr.b, tr.r
            stage = "solve"
            mixture = online_to_batch(res.history_sum[None] / m, policy_class)
            report = {"algorithm": "spar-exp4", "iterations": {"T": m}, "p_min": res.row.p_min}
        else:
            log = explore_uniform(env, m, stream(config.seed, "explore"))
            log.write_jsonl(out / "log.jsonl")
            ctx, a, b, r = log.contexts, log.a, log.b, log.r
            stage = "solve"
            rep = solve_log(
                log, policy_class, config.algorithm, config.eps, config.delta, config.seed,
                config.scale, config.rounds, config.n_out, config.n_in,
            )
            mixture, report = rep.mixture, rep.to_json()
        write_mixture(out / "mixture.json", mixture, report)

        stage = "certify"
        cert = certify(env, policy_class, mixture, config.eps, mixture_file="mixture.json")
        (out / "certificate.json").write_text(dumps(cert.to_json()), encoding="utf-8", newline="\n")

        stage = "exploit"
        ec, ea, eb, er = exploit(
            env, mixture, config.T - m, stream(config.seed, "exploit-nature"), stream(config.seed, "exploit")
        )
        ctx, a, b = (np.concatenate([x, y]) for x, y in ((ctx, ec), (a, ea), (b, eb)))
        r = np.concatenate([r, er])
        cum = cumulative_regret(env, policy_class, ctx, a, b)
        write_csv(out / "regret.csv", ctx, a, b, r, cum)
    except ConfigError:
        raise
    except DuelError as exc:
        exc.args = (f"stage '{stage}': {exc}",)
        raise
    return {
        "out_dir": str(out),
        "m": m,
        "T": config.T,
        "certificate": cert.to_json(),
        "final_regret": float(cum[-1]),
        "files": sorted(p.name for p in out.iterdir()),
    }
