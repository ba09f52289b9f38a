"""Command line entry point.

Exit codes: 0 success, 1 invariant or run failure, 2 config or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import hard_instance
from .harness import ConfigError, ExperimentConfig, run_experiment, sweep
from .mdp import OracleError, load_mdp, save_mdp, solve_average_oracle
from .verify import SCOPES, verify_invariants

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --seeds value {text!r}") from exc


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seeds:
        cfg = ExperimentConfig.from_json({**cfg.to_json(), "seeds": _parse_seeds(args.seeds)})
    res = run_experiment(cfg, workers=args.workers)
    for name, finals in res.final_regret.items():
        vals = list(finals.values())
        print(f"{name}: mean final regret {sum(vals) / len(vals):.6g} over {len(vals)} seeds")
    print(f"results in {res.output_dir}")
    for f in res.failures:
        print(f"run failed: agent={f['agent']} seed={f['seed']}: {f['error']}", file=sys.stderr)
    return EXIT_FAIL if res.failures else EXIT_OK


def cmd_verify(args) -> int:
    checks = verify_invariants(args.scope)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_oracle(args) -> int:
    mdp = load_mdp(args.mdp)
    sol = solve_average_oracle(mdp, tol=args.tol)
    print(json.dumps({"j_star": sol.j_star, "span": sol.span, "bias": sol.bias.tolist(),
                      "residual": sol.residual}, indent=2))
    return EXIT_OK


def cmd_hard_instance(args) -> int:
    params = hard_instance.load_params(args.params)
    mdp = hard_instance.build(params)
    save_mdp(mdp, args.emit)
    sol = hard_instance.analytic_optimal(params)
    print(json.dumps({"path": str(args.emit), "gap": params.gap, "alpha": params.alpha, "beta": params.beta,
                      "num_actions": mdp.num_actions, "j_star": sol.j_star, "span": sol.span}, indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    try:
        grid = json.loads(Path(args.grid).read_text() if Path(args.grid).exists() else args.grid)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad grid: {exc}") from exc
    rows = sweep(cfg, args.agent, grid, workers=args.workers)
    for r in rows:
        print(f"{json.dumps(r['point'])}: mean final regret {r['mean_final_regret']:.6g} "
              f"(se {r['stderr']:.3g}, n={r['n']})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uclkc", description="UCLK-C experiments, oracles and invariant checks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seeds", help="comma-separated seeds overriding the config")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run invariant suites")
    v.add_argument("scope", choices=("all",) + SCOPES)
    v.set_defaults(func=cmd_verify)

    o = sub.add_parser("oracle", help="solve a serialized MDP exactly")
    o.add_argument("mdp")
    o.add_argument("--tol", type=float, default=1e-10)
    o.set_defaults(func=cmd_oracle)

    h = sub.add_parser("hard-instance", help="build the two-state hard instance")
    h.add_argument("params", help="JSON string or path to a JSON file")
    h.add_argument("--emit", required=True, help="output path for the MDP JSON")
    h.set_defaults(func=cmd_hard_instance)

    s = sub.add_parser("sweep", help="grid search over agent overrides")
    s.add_argument("config")
    s.add_argument("--agent", required=True)
    s.add_argument("--grid", required=True, help='JSON like {"bonus_scale": [1, 0.1]} or a path')
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleError as exc:
        print(f"oracle failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
