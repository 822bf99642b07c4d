"""Experiment orchestration: seeded runs, greedy evaluation and CSV output.

A run directory holds::

    manifest.ini        resolved config (re-parseable), version and stream seeds
    seed_<k>.csv        one row per evaluation: step, seed, returns, theta, loss
    seed_<k>_timing.csv wall-clock milliseconds per evaluation row
    seed_<k>.npz        final checkpoint
    aggregate.csv       mean and std across seeds at each evaluation step
    failures.txt        seeds that raised, with the error (only when any did)

Everything except the timing files is a deterministic function of the
manifest, so re-running it reproduces the CSVs bit for bit.
"""

from __future__ import annotations

import csv
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .agent import EvalAgent
from .baselines import DqnAgent, SqlAgent, soft_policy, soft_value_iteration
from .config import ExperimentConfig, format_config, grid_spec, parse_config
from .envs import make_env, tabularize
from .mdp import TabularMDP, evaluate_policy, load_mdp
from .ppi import PpiAgent
from .replay import StopTraining
from .spectral import SaState, sa_learn_tabular, solve_erar

__all__ = [
    "RECORD_COLUMNS",
    "TIMING_COLUMNS",
    "AGGREGATE_COLUMNS",
    "SOLUTION_COLUMNS",
    "SWEEP_COLUMNS",
    "CONTINUING_COLUMNS",
    "SeedResult",
    "ExperimentResult",
    "make_environment",
    "build_agent",
    "evaluate_greedy",
    "run_seed",
    "run_experiment",
    "aggregate_records",
    "load_run",
    "read_csv",
    "tabular_instance",
    "write_solution",
    "cmd_sweep_gamma",
    "cmd_continuing",
    "cmd_ablate_nets",
]

RECORD_COLUMNS = ("step", "seed", "eval_return_mean", "eval_return_std", "theta_estimate", "td_loss")
TIMING_COLUMNS = ("step", "seed", "wall_ms")
AGGREGATE_COLUMNS = ("step", "num_seeds", "missing_seeds", "return_mean", "return_std",
                     "theta_mean", "td_loss_mean")
SOLUTION_COLUMNS = ("state", "action", "u", "v", "q", "policy")
SWEEP_COLUMNS = ("gamma", "sql_return", "eval_return", "gamma_gap_flag")
CONTINUING_COLUMNS = ("seed", "rollout", "length", "reached_limit")


# construction


def make_environment(cfg: ExperimentConfig, seed: int | None, max_episode_steps: int | None = None):
    if cfg.environment == "GridWorld":
        return make_env("GridWorld", seed=seed, grid=grid_spec(cfg.grid), max_episode_steps=max_episode_steps)
    return make_env(cfg.environment, seed=seed, max_episode_steps=max_episode_steps)


def _stream_seeds(seed: int) -> tuple[int, int]:
    """Independent seeds for the training and the evaluation environment."""
    train_ss, eval_ss = np.random.SeedSequence([seed, 0x5EED]).spawn(2)
    return int(train_ss.generate_state(1)[0]), int(eval_ss.generate_state(1)[0])


def build_agent(cfg: ExperimentConfig, env, seed: int):
    spec = env.spec
    terminal = spec.terminal_value if cfg.terminal_value is None else cfg.terminal_value
    buffer = cfg.buffer_size or cfg.budget
    if cfg.algorithm == "eval":
        return EvalAgent(cfg.eval, spec.obs_dim, spec.num_actions, seed, buffer, terminal)
    if cfg.algorithm == "eval-ppi":
        return PpiAgent(cfg.eval, spec.obs_dim, spec.num_actions, seed, buffer, terminal, cfg.ppi)
    if cfg.algorithm == "sql":
        return SqlAgent(cfg.sql, spec.obs_dim, spec.num_actions, seed, buffer, spec.reward_offset)
    if cfg.algorithm == "dqn":
        dqn = replace(cfg.dqn, buffer_size=min(cfg.dqn.buffer_size, buffer))
        return DqnAgent(dqn, spec.obs_dim, spec.num_actions, seed, cfg.budget, spec.reward_offset)
    raise ValueError(f"algorithm {cfg.algorithm!r} has no learning agent")


# evaluation


def evaluate_greedy(agent, env, episodes: int) -> tuple[float, float, list[int]]:
    """Greedy episodes; returns the mean and std of native returns and the episode lengths."""
    offset = env.spec.reward_offset
    returns, lengths = [], []
    for _ in range(episodes):
        obs = env.reset()
        total, steps = 0.0, 0
        while True:
            result = env.step(agent.greedy_action(obs))
            total += result.reward + offset
            steps += 1
            if result.terminated or result.truncated:
                break
            obs = result.observation
        returns.append(total)
        lengths.append(steps)
    return float(np.mean(returns)), float(np.std(returns)), lengths


# runs


@dataclass
class SeedResult:
    seed: int
    records: list[dict] = field(default_factory=list)
    timings: list[dict] = field(default_factory=list)
    error: str | None = None


@dataclass
class ExperimentResult:
    directory: Path
    seeds: list[SeedResult]

    @property
    def failed(self) -> list[int]:
        return [r.seed for r in self.seeds if r.error is not None]


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def read_csv(path) -> list[dict]:
    """Rows of a CSV written by the harness, as dicts of strings."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _train_seed(cfg: ExperimentConfig, seed: int, out: Path, result: SeedResult) -> None:
    train_seed, eval_seed = _stream_seeds(seed)
    env = make_environment(cfg, train_seed)
    eval_env = make_environment(cfg, eval_seed)
    agent = build_agent(cfg, env, seed)
    start = time.perf_counter()

    def hook(step, learner):
        if step % cfg.eval_interval:
            return None
        mean, std, _ = evaluate_greedy(learner, eval_env, cfg.eval_episodes)
        result.records.append({"step": step, "seed": seed, "eval_return_mean": mean,
                               "eval_return_std": std, "theta_estimate": float(learner.theta),
                               "td_loss": float(learner.last_loss)})
        result.timings.append({"step": step, "seed": seed,
                               "wall_ms": int(round(1000 * (time.perf_counter() - start)))})
        if cfg.stop_return is not None and mean >= cfg.stop_return:
            raise StopTraining()
        return None

    try:
        agent.train(env, cfg.budget, hook)
    finally:
        if cfg.checkpoint:
            agent.save(out / f"seed_{seed}.npz")


def tabular_instance(cfg: ExperimentConfig, mdp_path: str = "") -> TabularMDP:
    """The tabular MDP a solve or SA run works on: an MDP file or the configured gridworld."""
    if mdp_path:
        return load_mdp(mdp_path)
    if cfg.environment != "GridWorld":
        raise ValueError("tabular algorithms need environment = GridWorld or an mdp file")
    return tabularize(grid_spec(cfg.grid))[0]


def _sa_seed(cfg: ExperimentConfig, seed: int, result: SeedResult) -> None:
    sa = cfg.sa
    mdp = tabular_instance(cfg, sa.mdp)
    prior = np.full(mdp.next_state.shape, 1.0 / mdp.num_actions)
    rng = np.random.default_rng(seed)
    state: SaState | None = None
    start = time.perf_counter()
    exp_r = np.exp(sa.beta * mdp.reward)
    for step in range(cfg.eval_interval, cfg.budget + 1, cfg.eval_interval):
        state = sa_learn_tabular(mdp, prior, sa.beta, sa.alpha, sa.alpha_theta, cfg.eval_interval, rng,
                                 state=state, start_state=0, renorm_interval=sa.renorm_interval)
        u = state.u
        target = exp_r * np.exp(-sa.beta * state.theta) * np.sum(prior[mdp.next_state] * u[mdp.next_state], axis=2)
        policy = prior * u / np.sum(prior * u, axis=1, keepdims=True)
        rho = evaluate_policy(mdp, policy).rho
        result.records.append({"step": step, "seed": seed, "eval_return_mean": rho, "eval_return_std": 0.0,
                               "theta_estimate": state.theta,
                               "td_loss": 0.5 * float(np.mean((u - target) ** 2))})
        result.timings.append({"step": step, "seed": seed,
                               "wall_ms": int(round(1000 * (time.perf_counter() - start)))})


def run_seed(cfg: ExperimentConfig, seed: int, out_dir) -> SeedResult:
    """Train one seed and write its CSVs; failures are captured, not raised."""
    out = Path(out_dir)
    result = SeedResult(seed)
    try:
        if cfg.algorithm == "sa-tabular":
            _sa_seed(cfg, seed, result)
        else:
            _train_seed(cfg, seed, out, result)
    except Exception as exc:  # recorded per seed; the experiment continues
        result.error = f"{type(exc).__name__}: {exc}"
        (out / f"seed_{seed}.error.txt").write_text(traceback.format_exc())
    _write_csv(out / f"seed_{seed}.csv", RECORD_COLUMNS, result.records)
    _write_csv(out / f"seed_{seed}_timing.csv", TIMING_COLUMNS, result.timings)
    return result


def _run_seed_job(args):
    cfg, seed, out = args
    return run_seed(cfg, seed, out)


def aggregate_records(cfg: ExperimentConfig, results: list[SeedResult]) -> list[dict]:
    """Mean and std across seeds at every evaluation step of the budget.

    A seed without a row at some step (it failed or stopped early) carries
    its last evaluation forward when it stopped early and counts as missing
    when it failed.
    """
    steps = list(range(cfg.eval_interval, cfg.budget + 1, cfg.eval_interval))
    rows = []
    for step in steps:
        vals, thetas, losses, missing = [], [], [], []
        for res in sorted(results, key=lambda r: r.seed):
            recs = [r for r in res.records if r["step"] <= step]
            failed_before = res.error is not None and len(recs) == len(res.records) and (
                not recs or recs[-1]["step"] < step)
            if not recs or failed_before:
                missing.append(res.seed)
                continue
            last = recs[-1]
            vals.append(last["eval_return_mean"])
            thetas.append(last["theta_estimate"])
            losses.append(last["td_loss"])
        rows.append({
            "step": step,
            "num_seeds": len(vals),
            "missing_seeds": " ".join(str(s) for s in missing),
            "return_mean": float(np.mean(vals)) if vals else math.nan,
            "return_std": float(np.std(vals)) if vals else math.nan,
            "theta_mean": float(np.mean(thetas)) if thetas else math.nan,
            "td_loss_mean": float(np.mean(losses)) if losses else math.nan,
        })
    return rows


def _manifest(cfg: ExperimentConfig) -> str:
    seeds = cfg.seed_list
    streams = ", ".join(f"{s}:{_stream_seeds(s)[0]}/{_stream_seeds(s)[1]}" for s in seeds)
    return (format_config(cfg)
            + f"\n# code version {__version__}\n"
            + f"# seed: training env seed / evaluation env seed\n# {streams}\n")


def write_solution(mdp: TabularMDP, beta: float, out_dir, tol: float = 1e-10,
                   max_iter: int = 100_000) -> Path:
    """Solve exactly and write ``solution.txt`` plus ``solution.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prior = np.full(mdp.next_state.shape, 1.0 / mdp.num_actions)
    sol = solve_erar(mdp, prior, beta, tol, max_iter)
    with np.errstate(over="ignore", under="ignore"):
        u, v = np.exp(sol.log_u), np.exp(sol.log_v)
    pi = sol.policy
    rows = [{"state": s, "action": a, "u": u[s, a], "v": v[s, a], "q": sol.q[s, a], "policy": pi[s, a]}
            for s in range(mdp.num_states) for a in range(mdp.num_actions)]
    _write_csv(out / "solution.csv", SOLUTION_COLUMNS, rows)
    rho = evaluate_policy(mdp, pi).rho
    report = [
        f"states {mdp.num_states} actions {mdp.num_actions} beta {beta!r}",
        f"theta {sol.theta!r}",
        f"xi {sol.xi!r}",
        f"lambda1 {sol.lambda1!r}",
        f"lambda2_magnitude {sol.lambda2!r}",
        f"gamma_gap {sol.gap_discount!r}",
        f"mixing_time {sol.mixing_time!r}",
        f"degenerate_gap {sol.degenerate}",
        f"policy_reward_rate {rho!r}",
        f"iterations {sol.iterations}",
        f"residual {sol.residual!r}",
    ]
    (out / "solution.txt").write_text("\n".join(report) + "\n")
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every seed of ``cfg`` and write the run directory."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.ini").write_text(_manifest(cfg))
    if cfg.algorithm == "spectral-solve":
        solve = cfg.solve
        write_solution(tabular_instance(cfg, solve.mdp), solve.beta, out, solve.tol, solve.max_iter)
        return ExperimentResult(out, [])
    seeds = cfg.seed_list
    jobs = [(cfg, s, out) for s in seeds]
    if cfg.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(seeds))) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = [_run_seed_job(j) for j in jobs]
    results.sort(key=lambda r: r.seed)
    _write_csv(out / "aggregate.csv", AGGREGATE_COLUMNS, aggregate_records(cfg, results))
    failures = out / "failures.txt"
    failed = [r for r in results if r.error is not None]
    if failed:
        failures.write_text("".join(f"seed {r.seed}: {r.error}\n" for r in failed))
    elif failures.exists():
        failures.unlink()
    return ExperimentResult(out, results)


def load_run(run_dir, seed: int):
    """Config and agent of a finished run, with the seed's checkpoint loaded."""
    run_dir = Path(run_dir)
    cfg = parse_config(run_dir / "manifest.ini")
    ckpt = run_dir / f"seed_{seed}.npz"
    if not ckpt.exists():
        raise FileNotFoundError(f"no checkpoint for seed {seed} in {run_dir}")
    env = make_environment(cfg, None)
    agent = build_agent(cfg, env, seed)
    agent.load(ckpt)
    return cfg, agent


# figure data


def cmd_sweep_gamma(grid_text: str, beta: float, gammas, out_path, tol: float = 1e-10) -> list[dict]:
    """Discounted soft Q-learning return against the average-reward solution over ``gammas``.

    ``gamma_gap = |lambda2| / lambda1`` of the tilted matrix is added to the
    grid and flagged. Returns are exact long-run average rewards of each
    method's optimal stochastic policy.
    """
    mdp, prior = tabularize(grid_spec(grid_text))
    sol = solve_erar(mdp, prior, beta)
    eval_return = evaluate_policy(mdp, sol.policy).rho
    grid = sorted(set(float(g) for g in gammas) | {float(sol.gap_discount)})
    rows = []
    for g in grid:
        if not 0.0 <= g < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {g}")
        q = soft_value_iteration(mdp, prior, beta, g, tol=tol)
        rows.append({"gamma": g, "sql_return": evaluate_policy(mdp, soft_policy(q, prior, beta)).rho,
                     "eval_return": eval_return, "gamma_gap_flag": int(g == float(sol.gap_discount))})
    _write_csv(Path(out_path), SWEEP_COLUMNS, rows)
    return rows


def cmd_continuing(run_dir, limit: int, rollouts: int, out_path, seeds=None) -> list[dict]:
    """Greedy rollouts of trained checkpoints with the time limit raised to ``limit``."""
    run_dir = Path(run_dir)
    cfg = parse_config(run_dir / "manifest.ini")
    rows = []
    for seed in (cfg.seed_list if seeds is None else seeds):
        _, agent = load_run(run_dir, seed)
        env = make_environment(cfg, _stream_seeds(seed)[1] + 1, max_episode_steps=limit)
        _, _, lengths = evaluate_greedy(agent, env, rollouts)
        for k, n in enumerate(lengths):
            rows.append({"seed": seed, "rollout": k, "length": n, "reached_limit": int(n >= limit)})
    _write_csv(Path(out_path), CONTINUING_COLUMNS, rows)
    return rows


def cmd_ablate_nets(cfg: ExperimentConfig, nets, out_dir) -> list[dict]:
    """EVAL with ``N`` max-aggregated networks for each ``N`` in ``nets``.

    Each ``N`` gets its own run directory; ``ablation.csv`` has a ``step``
    column and one ``nets_<N>`` column of mean greedy return per ``N``.
    """
    if cfg.algorithm not in ("eval", "eval-ppi"):
        raise ValueError("the network ablation runs EVAL")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curves = {}
    for n in nets:
        sub = replace(cfg, eval=replace(cfg.eval, num_nets=int(n), aggregator="max",
                                        allow_single_net=int(n) < 2))
        res = run_experiment(sub, out / f"nets_{n}")
        curves[n] = aggregate_records(sub, res.seeds)
    steps = [r["step"] for r in next(iter(curves.values()))]
    rows = []
    for i, step in enumerate(steps):
        row = {"step": step}
        for n in nets:
            row[f"nets_{n}"] = curves[n][i]["return_mean"]
        rows.append(row)
    _write_csv(out / "ablation.csv", ("step",) + tuple(f"nets_{n}" for n in nets), rows)
    return rows
