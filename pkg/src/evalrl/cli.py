"""Command-line interface.

Exit codes: 0 on success, 1 for configuration or usage errors, 2 when a run
fails at runtime.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import DEFAULT_GRID, ConfigError, grid_spec, parse_config
from .envs import tabularize
from .harness import (
    cmd_ablate_nets,
    cmd_continuing,
    cmd_sweep_gamma,
    evaluate_greedy,
    load_run,
    make_environment,
    run_experiment,
    write_solution,
)
from .mdp import load_mdp

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load(args):
    cfg = parse_config(args.config)
    overrides = {}
    if getattr(args, "seeds", None) is not None:
        overrides["seeds"] = args.seeds
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "budget", None) is not None:
        overrides["budget"] = args.budget
    try:
        return replace(cfg, **overrides) if overrides else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _cmd_solve(args) -> int:
    if args.mdp and args.grid:
        raise UsageError("give either --mdp or --grid, not both")
    mdp = load_mdp(args.mdp) if args.mdp else tabularize(grid_spec(args.grid or DEFAULT_GRID))[0]
    out = write_solution(mdp, args.beta, args.output, args.tol, args.max_iter)
    print((out / "solution.txt").read_text(), end="")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _load(args)
    res = run_experiment(cfg, args.output)
    print(f"wrote {res.directory}")
    if res.failed:
        print(f"failed seeds: {res.failed}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg, agent = load_run(args.run, args.seed)
    env = make_environment(cfg, args.env_seed, max_episode_steps=args.limit)
    mean, std, lengths = evaluate_greedy(agent, env, args.episodes)
    print(f"seed {args.seed}: greedy return {mean:.3f} +- {std:.3f} over {args.episodes} episodes "
          f"(lengths {min(lengths)}..{max(lengths)})")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    rows = cmd_sweep_gamma(args.grid, args.beta, args.gammas, args.output)
    for r in rows:
        flag = "  <- gamma_gap" if r["gamma_gap_flag"] else ""
        print(f"gamma {r['gamma']:.6f}  sql {r['sql_return']:.6f}  eval {r['eval_return']:.6f}{flag}")
    return EXIT_OK


def _cmd_continuing(args) -> int:
    rows = cmd_continuing(args.run, args.limit, args.rollouts, args.output, args.seed_list)
    by_seed: dict[int, list[int]] = {}
    for r in rows:
        by_seed.setdefault(r["seed"], []).append(r["reached_limit"])
    for seed, hits in by_seed.items():
        print(f"seed {seed}: {sum(hits)}/{len(hits)} rollouts reached {args.limit} steps")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = _load(args)
    rows = cmd_ablate_nets(cfg, args.nets, args.output)
    last = rows[-1]
    print("final mean return: " + ", ".join(f"{k} {v:.2f}" for k, v in last.items() if k != "step"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evalrl", description="Entropy-regularized average-reward RL experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="exact spectral solution of a tabular problem")
    p.add_argument("--mdp", help="tabular MDP file")
    p.add_argument("--grid", help="gridworld 'width height start_x start_y goal_x goal_y step_reward'")
    p.add_argument("--beta", type=float, default=15.0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--output", default="solve")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("train", help="run an experiment config over its seeds")
    p.add_argument("config")
    p.add_argument("--output", help="run directory (default: output_dir from the config)")
    p.add_argument("--seeds", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a trained checkpoint")
    p.add_argument("run", help="run directory written by train")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--limit", type=int, help="episode time limit")
    p.add_argument("--env-seed", type=int, default=12345)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep-gamma", help="discounted soft Q-learning across discount factors")
    p.add_argument("--grid", default=DEFAULT_GRID)
    p.add_argument("--beta", type=float, default=15.0)
    p.add_argument("--gammas", type=_floats, default=[0.5, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999])
    p.add_argument("--output", default="sweep_gamma.csv")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("continuing", help="greedy rollouts with a raised time limit")
    p.add_argument("run", help="run directory written by train")
    p.add_argument("--limit", type=int, default=10_000)
    p.add_argument("--rollouts", type=int, default=10)
    p.add_argument("--seed-list", type=_ints, help="comma-separated seeds (default: all)")
    p.add_argument("--output", default="continuing.csv")
    p.set_defaults(func=_cmd_continuing)

    p = sub.add_parser("ablate-nets", help="EVAL with different numbers of networks")
    p.add_argument("config")
    p.add_argument("--nets", type=_ints, default=[1, 2, 3, 4])
    p.add_argument("--output", default="ablation")
    p.add_argument("--seeds", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "output", None) is not None and args.command in ("sweep-gamma", "continuing"):
            Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
