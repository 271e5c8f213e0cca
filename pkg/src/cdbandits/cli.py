"""Command-line front end: ``cdbandits <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 certification failure,
4 numeric non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .batch import ExplorationLog, explore_uniform
from .core import DuelError, NonConvergence, dumps, format_float, read_preference_matrix
from .env import make_environment, read_environment, write_environment
from .online import online_to_batch, sparring_exp4p
from .pipeline import (
    ConfigError,
    ExperimentConfig,
    certify,
    policy_class_for,
    read_mixture,
    run_pipeline,
    solve_log,
    write_csv,
    write_mixture,
)
from .rng import stream
from .winners import solve_von_neumann, winner_report

EXIT_OK, EXIT_CONFIG, EXIT_CERT, EXIT_NONCONV = 0, 2, 3, 4
GLOBAL_DEFAULTS = {"seed": 0, "out_dir": ".", "format": "json"}


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand without
    # the subparser default clobbering a value given up front
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
    p.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for relative output paths (default .)")
    p.add_argument("--format", choices=("json", "csv"), default=argparse.SUPPRESS, help="stdout format (default json)")
    return p


def _out_path(args, name: str | None, default: str | None = None) -> Path | None:
    name = name or default
    if name is None:
        return None
    path = Path(name)
    if not path.is_absolute():
        path = Path(args.out_dir) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _emit(args, summary: dict) -> None:
    if args.format == "json":
        sys.stdout.write(dumps(summary))
        return
    sys.stdout.write("key,value\n")
    for key, value in _flatten(summary):
        sys.stdout.write(f"{key},{value}\n")


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}{k}.")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}{i}.")
    elif isinstance(obj, float):
        yield prefix[:-1], format_float(obj)
    else:
        yield prefix[:-1], "" if obj is None else obj


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def _policies(args, env_or_log):
    spec = _load_json(args.policies) if args.policies else None
    return policy_class_for(spec, env_or_log.n_contexts, env_or_log.k)


def _env(path):
    if not Path(path).is_file():
        raise ConfigError(f"environment file {path} does not exist")
    return read_environment(path)


def cmd_make_env(args) -> int:
    params: dict = {}
    if args.params:
        params.update(_load_json(args.params) if Path(args.params).is_file() else json.loads(args.params))
    for name in ("k", "gap"):
        if getattr(args, name) is not None:
            params[name] = getattr(args, name)
    if args.utilities:
        params["utilities"] = [float(x) for x in args.utilities.split(",")]
    env = make_environment(args.kind, params, args.seed)
    path = _out_path(args, args.out, "env.json")
    write_environment(env, path)
    _emit(args, {"env": str(path), "k": env.k, "n_contexts": env.n_contexts})
    return EXIT_OK


def cmd_winners(args) -> int:
    obj = _load_json(args.matrix)
    if "contexts" in obj:
        env = read_environment(args.matrix)
        if env.n_contexts != 1:
            raise ConfigError("winners needs a single matrix or a single-context environment")
        P = env.matrices[0]
    else:
        P = read_preference_matrix(args.matrix)
    sol = solve_von_neumann(P, args.eps, method=args.method)
    report = winner_report(P)
    if args.format == "csv":
        sys.stdout.write("arm,von_neumann,copeland_strict,copeland_weak,copeland_net,borda,random_walk\n")
        for i in range(P.k):
            row = (sol.strategy[i], report.copeland_strict[i], report.copeland_weak[i], report.copeland_net[i],
                   report.borda[i], report.random_walk[i])
            sys.stdout.write(f"{i + 1}," + ",".join(format_float(float(x)) for x in row) + "\n")
    else:
        sys.stdout.write(dumps({"report": report.to_json(), "solution": sol.to_json()}))
    return EXIT_OK


def cmd_explore(args) -> int:
    env = _env(args.env)
    log = explore_uniform(env, args.m, stream(args.seed, "explore"))
    path = _out_path(args, args.out, "log.jsonl")
    log.write_jsonl(path)
    _emit(args, {"log": str(path), "m": log.m, "L": log.L, "V": log.V})
    return EXIT_OK


def _train(args, algorithm: str) -> int:
    if not 0 < args.eps < 1 or not 0 < args.delta < 1:
        raise ConfigError("eps and delta must lie in (0, 1)")
    if not Path(args.log).is_file():
        raise ConfigError(f"log file {args.log} does not exist")
    log = ExplorationLog.read_jsonl(args.log)
    cls = _policies(args, log)
    kw = {"rounds": args.rounds} if algorithm == "fpl" else {"n_out": args.n_out, "n_in": args.n_in}
    rep = solve_log(log, cls, algorithm, args.eps, args.delta, args.seed, args.scale, **kw)
    path = _out_path(args, args.out, "mixture.json")
    write_mixture(path, rep.mixture, rep.to_json())
    _emit(args, {"mixture": str(path), **rep.to_json()})
    return EXIT_OK


def cmd_spar_exp4(args) -> int:
    if args.T < 1 or not 0 < args.delta < 1:
        raise ConfigError("need T >= 1 and delta in (0, 1)")
    env = _env(args.env)
    cls = _policies(args, env)
    res = sparring_exp4p(env, cls, args.T, args.delta, seed=args.seed, keep_history=False)
    tr = res.transcript
    path = _out_path(args, args.out, "run.csv")
    write_csv(path, tr.contexts, tr.a, tr.b, tr.r, tr.cumulative_regret)
    summary = {"csv": str(path), "T": args.T, "final_regret": float(tr.cumulative_regret[-1])}
    if args.mixture_out:
        mpath = _out_path(args, args.mixture_out)
        write_mixture(mpath, online_to_batch(res.history_sum[None] / args.T, cls), {"algorithm": "spar-exp4", "T": args.T})
        summary["mixture"] = str(mpath)
    _emit(args, summary)
    return EXIT_OK


def cmd_certify(args) -> int:
    if not 0 < args.eps < 1:
        raise ConfigError("eps must lie in (0, 1)")
    env = _env(args.env)
    if not Path(args.mixture).is_file():
        raise ConfigError(f"mixture file {args.mixture} does not exist")
    out = _out_path(args, args.out)
    # the certificate points at its mixture relative to where it is written
    ref = os.path.relpath(args.mixture, out.parent) if out else str(args.mixture)
    cert = certify(env, _policies(args, env), read_mixture(args.mixture), args.eps, mixture_file=ref)
    if out:
        out.write_text(dumps(cert.to_json()), encoding="utf-8", newline="\n")
    _emit(args, cert.to_json())
    return EXIT_OK if cert.passed else EXIT_CERT


def cmd_run(args) -> int:
    obj = _load_json(args.config)
    for flag, key in (("seed", "seed"), ("out_dir", "out_dir")):
        if flag in args.explicit:
            obj[key] = getattr(args, flag)
    config = ExperimentConfig.from_json(obj)
    summary = run_pipeline(config)
    _emit(args, summary)
    return EXIT_OK if summary["certificate"]["passed"] else EXIT_CERT


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(
        prog="cdbandits", description="Contextual dueling bandit simulator.", parents=[common]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-env", parents=[common], help="generate an environment JSON")
    p.add_argument("--kind", required=True,
                   choices=("cycle", "condorcet", "clone", "appendix_b_5arm", "random_skew", "utility", "composite"))
    p.add_argument("--k", type=int)
    p.add_argument("--gap", type=float)
    p.add_argument("--utilities", help="comma-separated utilities for kind=utility")
    p.add_argument("--params", help="extra generator params as a JSON string or file (composite: {'parts': [...]})")
    p.add_argument("--out")
    p.set_defaults(func=cmd_make_env)

    p = sub.add_parser("winners", parents=[common], help="von Neumann and tournament winners of a matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--method", choices=("lp", "mwu"), default="lp")
    p.set_defaults(func=cmd_winners)

    p = sub.add_parser("explore", parents=[common], help="uniform exploration log")
    p.add_argument("--env", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_explore)

    for name, algorithm in (("train-fpl", "fpl"), ("train-pgd", "pgd")):
        p = sub.add_parser(name, parents=[common], help=f"solve a saved log with {algorithm.upper()}")
        p.add_argument("--log", required=True)
        p.add_argument("--eps", type=float, default=0.25)
        p.add_argument("--delta", type=float, default=0.1)
        p.add_argument("--policies", help="JSON list of policies, 1-indexed actions per context (default: all maps)")
        p.add_argument("--scale", choices=("empirical", "theory"), default="empirical")
        if algorithm == "fpl":
            p.add_argument("--rounds", type=int)
        else:
            p.add_argument("--n-out", type=int)
            p.add_argument("--n-in", type=int)
        p.add_argument("--out")
        p.set_defaults(func=lambda a, alg=algorithm: _train(a, alg))

    p = sub.add_parser("spar-exp4", parents=[common], help="SparringEXP4.P regret run")
    p.add_argument("--env", required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--policies")
    p.add_argument("--out")
    p.add_argument("--mixture-out", help="also write the online-to-batch mixture")
    p.set_defaults(func=cmd_spar_exp4)

    p = sub.add_parser("certify", parents=[common], help="exact certificate for a mixture")
    p.add_argument("--env", required=True)
    p.add_argument("--mixture", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--policies")
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("run", parents=[common], help="full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.explicit = {k for k in GLOBAL_DEFAULTS if hasattr(args, k)}
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    try:
        return args.func(args)
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except (DuelError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
