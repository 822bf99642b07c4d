"""Discounted baselines: tabular soft value iteration, deep soft Q-learning and DQN.

The deep agents learn from native (unshifted) rewards; they receive the
environment's shifted rewards and add ``reward_offset`` back.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .agent import aggregate
from .envs.base import StepResult
from .mdp import TabularMDP, check_policy
from .nn import AdamState, Mlp, adam_step, load_checkpoint, polyak_update, save_checkpoint
from .replay import ReplayBuffer, run_loop

__all__ = [
    "soft_value_iteration",
    "soft_policy",
    "SqlConfig",
    "DqnConfig",
    "SqlAgent",
    "DqnAgent",
    "epsilon_schedule",
]


def soft_value_iteration(
    mdp: TabularMDP,
    prior,
    beta: float,
    gamma: float,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
    history: list | None = None,
) -> np.ndarray:
    """Fixed point of ``Q = r + gamma / beta * log E_{a' ~ prior} exp(beta Q(s', a'))``.

    Sweeps stop once the sup-norm change is ``<= tol``. Per-sweep changes are
    appended to ``history`` when given.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if not beta > 0:
        raise ValueError("beta must be positive")
    pi0 = check_policy(prior, mdp.next_state.shape, full_support=True)
    r = mdp.reward
    q = r.copy()
    log_pi0 = np.log(pi0)
    for _ in range(max_iter):
        v = logsumexp(beta * q + log_pi0, axis=1) / beta
        new = r + gamma * v[mdp.next_state]
        change = float(np.max(np.abs(new - q)))
        q = new
        if history is not None:
            history.append(change)
        if change <= tol:
            return q
    raise RuntimeError(f"soft value iteration did not reach tol={tol} in {max_iter} sweeps")


def soft_policy(q: np.ndarray, prior, beta: float) -> np.ndarray:
    """``pi(a|s) ~ prior(a|s) exp(beta Q(s, a))``."""
    logits = np.log(np.asarray(prior, dtype=np.float64)) + beta * np.asarray(q)
    return np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))


@dataclass(frozen=True)
class SqlConfig:
    beta: float
    gamma: float = 0.99
    lr: float = 1e-3
    batch_size: int = 64
    hidden_dim: int = 64
    num_hidden: int = 2
    tau: float = 1.0
    target_update_interval: int = 100
    gradient_steps: int = 1
    learn_starts: int = 1000
    num_nets: int = 2
    aggregator: str = "min"

    def __post_init__(self):
        _check_common(self)
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @classmethod
    def preset(cls, env_name: str, **overrides) -> "SqlConfig":
        try:
            return replace(SQL_PRESETS[env_name], **overrides)
        except KeyError:
            raise ValueError(f"no SQL preset for {env_name!r}") from None


@dataclass(frozen=True)
class DqnConfig:
    gamma: float = 0.99
    lr: float = 1e-3
    batch_size: int = 64
    buffer_size: int = 100_000
    hidden_dim: int = 256
    num_hidden: int = 2
    tau: float = 1.0
    target_update_interval: int = 10
    exploration_final: float = 0.05
    exploration_fraction: float = 0.1
    gradient_steps: int = 1
    train_freq: int = 4
    learn_starts: int = 1000
    max_grad_norm: float = 10.0

    def __post_init__(self):
        _check_common(self)
        if not 0.0 <= self.exploration_final <= 1.0 or not 0.0 < self.exploration_fraction <= 1.0:
            raise ValueError("invalid exploration schedule")
        if self.train_freq == 0 or self.train_freq < -1:
            raise ValueError("train_freq must be >= 1, or -1 for once per episode")
        if self.buffer_size < 1:
            raise ValueError("buffer_size must be >= 1")

    @classmethod
    def preset(cls, env_name: str, **overrides) -> "DqnConfig":
        try:
            return replace(DQN_PRESETS[env_name], **overrides)
        except KeyError:
            raise ValueError(f"no DQN preset for {env_name!r}") from None


def _check_common(cfg) -> None:
    if not 0.0 <= cfg.gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if not cfg.lr > 0:
        raise ValueError("lr must be positive")
    if not 0.0 < cfg.tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    if cfg.batch_size < 1 or cfg.target_update_interval < 1 or cfg.hidden_dim < 1:
        raise ValueError("batch_size, target_update_interval and hidden_dim must be >= 1")
    if cfg.gradient_steps == 0 or cfg.gradient_steps < -1:
        raise ValueError("gradient_steps must be >= 1, or -1 to match collected steps")
    if cfg.learn_starts < 0:
        raise ValueError("learn_starts must be >= 0")


SQL_PRESETS = {
    "CartPole-v1": SqlConfig(beta=0.1, gamma=0.98, lr=2e-2, batch_size=64, hidden_dim=64, tau=0.95,
                             target_update_interval=100, gradient_steps=9, learn_starts=1000),
    "Acrobot-v1": SqlConfig(beta=2.6, gamma=0.999, lr=6.6e-3, batch_size=128, hidden_dim=32, tau=0.92,
                            target_update_interval=100, gradient_steps=9, learn_starts=2000),
    "MountainCar-v0": SqlConfig(beta=0.7, gamma=0.99, lr=2e-3, batch_size=128, hidden_dim=64, tau=0.97,
                                target_update_interval=100, gradient_steps=2, learn_starts=9000),
}

DQN_PRESETS = {
    "CartPole-v1": DqnConfig(gamma=0.99, lr=2.3e-3, batch_size=64, buffer_size=100_000,
                             target_update_interval=10, exploration_final=0.04, exploration_fraction=0.16,
                             gradient_steps=128, train_freq=256, learn_starts=1000),
    "Acrobot-v1": DqnConfig(gamma=0.99, lr=6.3e-4, batch_size=128, buffer_size=50_000,
                            target_update_interval=250, exploration_final=0.1, exploration_fraction=0.12,
                            gradient_steps=-1, train_freq=4, learn_starts=0),
    "MountainCar-v0": DqnConfig(gamma=0.98, lr=4e-3, batch_size=128, buffer_size=10_000,
                                target_update_interval=600, exploration_final=0.07, exploration_fraction=0.2,
                                gradient_steps=8, train_freq=16, learn_starts=1000),
}


def epsilon_schedule(step: int, budget: int, final: float, fraction: float) -> float:
    """Linear decay from 1 to ``final`` over the first ``fraction * budget`` steps."""
    horizon = fraction * budget
    if horizon <= 0 or step >= horizon:
        return final
    return 1.0 + (final - 1.0) * step / horizon


class _QAgent:
    """Shared plumbing: Q networks with linear heads, targets, replay and RNG streams."""

    def __init__(self, cfg, obs_dim: int, num_actions: int, num_nets: int, seed: int,
                 buffer_capacity: int, reward_offset: float):
        self.config = cfg
        self.obs_dim = obs_dim
        self.num_actions = num_actions
        self.reward_offset = float(reward_offset)
        init_ss, act_ss, replay_ss = np.random.SeedSequence(seed).spawn(3)
        seeds = init_ss.generate_state(num_nets)
        self.online = [Mlp.build(obs_dim, num_actions, cfg.hidden_dim, "linear", int(s), cfg.num_hidden)
                       for s in seeds]
        self.target = [net.copy() for net in self.online]
        self.optim = [AdamState.for_net(net, cfg.lr) for net in self.online]
        self.buffer = ReplayBuffer(buffer_capacity, obs_dim, num_actions, nonpositive=False)
        self.act_rng = np.random.default_rng(act_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        self.last_loss = float("nan")
        self.gradient_updates = 0
        self.env_steps = 0
        self.theta = float("nan")

    def q_values(self, observations: np.ndarray, nets: Sequence[Mlp] | None = None) -> np.ndarray:
        nets = self.online if nets is None else nets
        return aggregate([n.forward(observations) for n in nets], getattr(self.config, "aggregator", "max"))

    def greedy_action(self, observation: np.ndarray) -> int:
        return int(np.argmax(self.q_values(np.atleast_2d(observation))[0]))

    def _store(self, state, action: int, result: StepResult, step: int) -> None:
        self.buffer.add(state, action, result.reward + self.reward_offset, result.observation, result.terminated)
        self.env_steps = step

    def _fit(self, net: Mlp, opt: AdamState, states, actions, targets, huber: bool,
             max_grad_norm: float | None) -> float:
        rows = np.arange(len(actions))
        q = net.forward(states, keep_cache=True)
        diff = q[rows, actions] - targets
        if huber:
            value = float(np.mean(np.where(np.abs(diff) <= 1.0, 0.5 * diff**2, np.abs(diff) - 0.5)))
            d = np.clip(diff, -1.0, 1.0)
        else:
            value = 0.5 * float(np.mean(diff**2))
            d = diff
        if not np.isfinite(value):
            raise FloatingPointError("non-finite loss")
        g = np.zeros_like(q)
        g[rows, actions] = d / len(actions)
        grads = net.backward(g)
        if max_grad_norm is not None:
            norm = np.sqrt(sum(float(np.sum(x * x)) for x in grads))
            if norm > max_grad_norm:
                grads = [x * (max_grad_norm / norm) for x in grads]
        adam_step(net, grads, opt)
        return value

    def update_targets(self) -> None:
        for tgt, net in zip(self.target, self.online):
            polyak_update(tgt, net, self.config.tau)

    def train(self, env, sample_budget: int, eval_hook=None) -> list:
        return run_loop(self, env, sample_budget, eval_hook)

    def save(self, path) -> None:
        save_checkpoint(path, self.online + self.target, {"env_steps": self.env_steps})

    def load(self, path) -> None:
        nets, extra = load_checkpoint(path)
        if len(nets) != len(self.online) + len(self.target):
            raise ValueError("checkpoint does not match the agent's network count")
        for dst, src in zip(self.online + self.target, nets):
            if not dst.same_architecture(src):
                raise ValueError("checkpoint architecture mismatch")
            dst.params = src.params
        self.env_steps = int(extra["env_steps"])


class SqlAgent(_QAgent):
    """Soft Q-learning with ``num_nets`` online nets aggregated by ``min`` in the target.

    Target: ``r + gamma (1 - done) / beta * log E_{a' ~ prior} exp(beta Q_agg(s', a'))``
    with a uniform prior. Actions are sampled from ``pi ~ exp(beta Q)``;
    evaluation is greedy in ``Q``.
    """

    def __init__(self, config: SqlConfig, obs_dim: int, num_actions: int, seed: int = 0,
                 buffer_capacity: int = 100_000, reward_offset: float = 0.0):
        super().__init__(config, obs_dim, num_actions, config.num_nets, seed, buffer_capacity, reward_offset)
        self.log_prior = -np.log(num_actions)

    def soft_value(self, q: np.ndarray) -> np.ndarray:
        b = self.config.beta
        return logsumexp(b * q + self.log_prior, axis=-1) / b

    def policy(self, observation: np.ndarray) -> np.ndarray:
        q = self.q_values(np.atleast_2d(observation))
        return soft_policy(q, np.full(q.shape, 1.0 / self.num_actions), self.config.beta)[0]

    def act(self, observation: np.ndarray) -> int:
        c = np.cumsum(self.policy(observation))
        return int(min(np.searchsorted(c, self.act_rng.random() * c[-1], side="right"), self.num_actions - 1))

    def observe(self, state, action: int, result: StepResult, step: int) -> None:
        self._store(state, action, result, step)
        cfg = self.config
        if step > cfg.learn_starts:
            losses = []
            for _ in range(cfg.gradient_steps):
                batch = self.buffer.sample(cfg.batch_size, self.replay_rng)
                v_next = self.soft_value(self.q_values(batch.next_states, self.target))
                targets = batch.rewards + cfg.gamma * np.where(batch.terminated, 0.0, v_next)
                for net, opt in zip(self.online, self.optim):
                    losses.append(self._fit(net, opt, batch.states, batch.actions, targets, False, None))
                self.gradient_updates += 1
            self.last_loss = float(np.mean(losses))
        if step % cfg.target_update_interval == 0:
            self.update_targets()


class DqnAgent(_QAgent):
    """DQN: epsilon-greedy collection, max bootstrap, Huber loss, periodic target copies.

    ``train_freq`` counts environment steps between training rounds, or
    ``-1`` for one round at the end of every episode; ``gradient_steps = -1``
    runs as many updates as steps collected since the previous round.
    """

    def __init__(self, config: DqnConfig, obs_dim: int, num_actions: int, seed: int = 0,
                 sample_budget: int = 50_000, reward_offset: float = 0.0):
        super().__init__(config, obs_dim, num_actions, 1, seed,
                         min(config.buffer_size, sample_budget), reward_offset)
        self.sample_budget = sample_budget
        self._since_train = 0

    @property
    def epsilon(self) -> float:
        cfg = self.config
        return epsilon_schedule(self.env_steps, self.sample_budget, cfg.exploration_final,
                                cfg.exploration_fraction)

    def act(self, observation: np.ndarray) -> int:
        if self.act_rng.random() < self.epsilon:
            return int(self.act_rng.integers(self.num_actions))
        return self.greedy_action(observation)

    def _train_round(self) -> None:
        cfg = self.config
        steps = self._since_train if cfg.gradient_steps == -1 else cfg.gradient_steps
        self._since_train = 0
        if self.env_steps <= cfg.learn_starts:
            return
        losses = []
        net, opt = self.online[0], self.optim[0]
        for _ in range(steps):
            batch = self.buffer.sample(cfg.batch_size, self.replay_rng)
            q_next = self.target[0].forward(batch.next_states).max(axis=1)
            targets = batch.rewards + cfg.gamma * np.where(batch.terminated, 0.0, q_next)
            losses.append(self._fit(net, opt, batch.states, batch.actions, targets, True, cfg.max_grad_norm))
            self.gradient_updates += 1
        if losses:
            self.last_loss = float(np.mean(losses))

    def observe(self, state, action: int, result: StepResult, step: int) -> None:
        self._store(state, action, result, step)
        self._since_train += 1
        cfg = self.config
        if cfg.train_freq > 0 and step % cfg.train_freq == 0:
            self._train_round()
        if step % cfg.target_update_interval == 0:
            self.update_targets()

    def end_episode(self, step: int) -> None:
        if self.config.train_freq == -1:
            self._train_round()
