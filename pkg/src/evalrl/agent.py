"""EVAL: off-policy learning of the left eigenvector ``u`` with neural networks.

``N`` online softplus networks regress on a shared target built from ``N``
lagging copies::

    u_hat(s, a) = exp(beta (r - theta)) * sum_a' pi0(a'|s') u_agg(s', a')

where ``u_agg`` aggregates the target nets elementwise (``max`` by default).
The rate is tracked through the eigenvalue itself,
``exp(beta theta) ~ mean_batch exp(beta r) E_pi0 u(s', .) / u(s, a)``,
evaluated on the online nets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .envs.base import StepResult
from .nn import AdamState, Mlp, adam_step, load_checkpoint, polyak_update, save_checkpoint, softplus_inverse
from .replay import Batch, ReplayBuffer, run_loop

__all__ = [
    "AGGREGATORS",
    "POSITIVITY_FLOOR",
    "PositivityStats",
    "TdOverflowError",
    "TrainingDiverged",
    "EvalAgentConfig",
    "EvalAgent",
    "aggregate",
    "td_target",
    "loss",
    "theta_batch_estimate",
    "update_theta",
    "tabular_u_net",
    "uniform_prior",
]

AGGREGATORS = ("max", "min", "mean")
POSITIVITY_FLOOR = 1e-30
MAX_EXPONENT = 700.0
# With a zero terminal value the TD equation is homogeneous: the scale of u is
# arbitrary and drifts toward underflow. Once targets fall below RESCALE_BELOW
# every u net's output is multiplied by RESCALE_FACTOR.
RESCALE_BELOW = 1e-20
RESCALE_FACTOR = 1e10


class TdOverflowError(FloatingPointError):
    """The TD target's exponential overflowed; ``beta`` is mis-scaled or rewards are unshifted."""


class TrainingDiverged(RuntimeError):
    """A non-finite loss; ``checkpoint`` holds the last known good online nets."""

    def __init__(self, message: str, checkpoint: list[Mlp], theta: float, step: int):
        super().__init__(f"{message} at environment step {step}")
        self.checkpoint = checkpoint
        self.theta = theta
        self.step = step


@dataclass
class PositivityStats:
    """Counts values that fell below the positivity floor before a log or division."""

    violations: int = 0
    floor: float = POSITIVITY_FLOOR

    def clamp(self, x: np.ndarray) -> np.ndarray:
        bad = x < self.floor
        if np.any(bad):
            self.violations += int(bad.sum())
            x = np.where(bad, self.floor, x)
        return x


def uniform_prior(observations: np.ndarray, num_actions: int) -> np.ndarray:
    n = np.atleast_2d(observations).shape[0]
    return np.full((n, num_actions), 1.0 / num_actions)


def aggregate(values: Sequence[np.ndarray], mode: str = "max") -> np.ndarray:
    """Elementwise ``max``, ``min`` or ``mean`` over per-net outputs."""
    if len(values) == 0:
        raise ValueError("aggregate needs at least one array")
    if mode not in AGGREGATORS:
        raise ValueError(f"aggregator must be one of {AGGREGATORS}, got {mode!r}")
    if len(values) == 1:
        return np.asarray(values[0])
    if mode == "max":
        return np.maximum.reduce(values)
    if mode == "min":
        return np.minimum.reduce(values)
    return np.mean(values, axis=0)


def _prior_at(prior, observations: np.ndarray, num_actions: int) -> np.ndarray:
    if prior is None:
        return uniform_prior(observations, num_actions)
    if callable(prior):
        return prior(observations)
    p = np.asarray(prior, dtype=np.float64)
    return np.broadcast_to(p, (observations.shape[0], num_actions)) if p.ndim == 1 else p


def _expected_u(nets: Sequence[Mlp], observations: np.ndarray, prior, aggregator: str) -> np.ndarray:
    u = aggregate([net.forward(observations) for net in nets], aggregator)
    return np.sum(_prior_at(prior, observations, u.shape[1]) * u, axis=1)


def td_target(
    batch: Batch,
    target_nets: Sequence[Mlp],
    prior,
    theta: float,
    beta: float,
    aggregator: str = "max",
    terminal_value: float = 1.0,
) -> np.ndarray:
    """Per-item target ``exp(beta (r - theta)) E_{a' ~ prior} u_agg(s', a')``.

    ``prior`` is ``None`` (uniform), an array of next-state probabilities, or
    a callable mapping observations to probabilities. Terminated items use
    ``terminal_value`` in place of the expectation.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if not np.isfinite(theta):
        raise ValueError(f"theta must be finite, got {theta}")
    exponent = beta * (batch.rewards - theta)
    if np.any(exponent > MAX_EXPONENT):
        worst = int(np.argmax(exponent))
        raise TdOverflowError(
            f"exp(beta (r - theta)) overflows: beta={beta}, r={batch.rewards[worst]}, theta={theta}"
        )
    nxt = _expected_u(target_nets, batch.next_states, prior, aggregator)
    nxt = np.where(batch.terminated, terminal_value, nxt)
    out = np.exp(exponent) * nxt
    if not np.all(np.isfinite(out)):
        raise TdOverflowError("non-finite TD target")
    return out


def loss(batch: Batch, online_net: Mlp, targets: np.ndarray) -> float:
    """``0.5 * mean((u(s, a) - u_hat)^2)`` for one online net."""
    pred = online_net.forward(batch.states)[np.arange(len(batch)), batch.actions]
    value = 0.5 * float(np.mean((pred - targets) ** 2))
    if not np.isfinite(value):
        raise FloatingPointError("non-finite TD loss")
    return value


def theta_batch_estimate(
    batch: Batch,
    online_nets: Sequence[Mlp],
    prior,
    beta: float,
    aggregator: str = "max",
    terminal_value: float = 1.0,
    stats: PositivityStats | None = None,
    pooled: bool = False,
) -> float:
    """Batch estimate of ``exp(beta theta)`` from the online nets.

    The default averages the per-item ratios ``exp(beta r) E u(s', .) / u(s, a)``.
    ``pooled`` divides the batch means instead, which has the same fixed point
    but is not dominated by items whose ``u(s, a)`` is nearly zero.
    """
    stats = stats if stats is not None else PositivityStats()
    u_sa = aggregate([net.forward(batch.states) for net in online_nets], aggregator)
    u_sa = u_sa[np.arange(len(batch)), batch.actions]
    nxt = _expected_u(online_nets, batch.next_states, prior, aggregator)
    nxt = np.where(batch.terminated, terminal_value, nxt)
    num = np.exp(beta * batch.rewards) * nxt
    if pooled:
        return float(np.mean(num) / stats.clamp(np.mean(u_sa)))
    return float(np.mean(num / stats.clamp(u_sa)))


def update_theta(theta: float, theta_new: float, tau_theta: float) -> float:
    """``theta (1 - tau) + theta_new tau``."""
    return theta * (1.0 - tau_theta) + theta_new * tau_theta


def tabular_u_net(u_table: np.ndarray) -> Mlp:
    """Softplus net without hidden layers whose output on one-hot state ``s`` is ``u[s]``."""
    u_table = np.asarray(u_table, dtype=np.float64)
    n_s, n_a = u_table.shape
    return Mlp([n_s, n_a], "softplus", params=[softplus_inverse(u_table), np.zeros(n_a)])


@dataclass(frozen=True)
class EvalAgentConfig:
    """Hyperparameters of EVAL; ``presets`` holds the tuned values per environment."""

    beta: float
    lr: float = 1e-3
    batch_size: int = 64
    target_update_interval: int = 10
    learn_starts: int = 0
    gradient_steps: int = 5
    num_nets: int = 2
    aggregator: str = "max"
    theta_mode: str = "frozen_zero"
    theta_estimator: str = "per_item"
    tau_theta: float = 0.01
    tau_psi: float = 1.0
    normalize_loss: bool = True
    hidden_dim: int = 64
    num_hidden: int = 2
    behavior: str = "learned"
    allow_single_net: bool = False
    prior_update_interval: int = 500  # used by PPI only

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.num_nets < 1 or (self.num_nets < 2 and not self.allow_single_net):
            raise ValueError("num_nets must be >= 2 (set allow_single_net for the ablation)")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        if self.theta_mode not in ("frozen_zero", "batch_estimate"):
            raise ValueError("theta_mode must be 'frozen_zero' or 'batch_estimate'")
        if self.theta_estimator not in ("per_item", "pooled"):
            raise ValueError("theta_estimator must be 'per_item' or 'pooled'")
        if self.behavior not in ("learned", "prior"):
            raise ValueError("behavior must be 'learned' or 'prior'")
        if not 0.0 <= self.tau_theta <= 1.0:
            raise ValueError("tau_theta must lie in [0, 1]")
        if not 0.0 < self.tau_psi <= 1.0:
            raise ValueError("tau_psi must lie in (0, 1]")
        for name in ("lr",):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_size", "target_update_interval", "gradient_steps", "hidden_dim",
                     "prior_update_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learn_starts < 0 or self.num_hidden < 0:
            raise ValueError("learn_starts and num_hidden must be >= 0")

    @classmethod
    def preset(cls, env_name: str, **overrides) -> "EvalAgentConfig":
        try:
            base = PRESETS[env_name]
        except KeyError:
            raise ValueError(f"no EVAL preset for {env_name!r}") from None
        return replace(base, **overrides)


PRESETS = {
    "CartPole-v1": EvalAgentConfig(beta=2.0, lr=1e-3, batch_size=64, target_update_interval=10,
                                   learn_starts=0, hidden_dim=16, prior_update_interval=500),
    "Acrobot-v1": EvalAgentConfig(beta=0.01, lr=5e-4, batch_size=64, target_update_interval=10,
                                  learn_starts=0, hidden_dim=64, prior_update_interval=500),
    "MountainCar-v0": EvalAgentConfig(beta=20.0, lr=6e-4, batch_size=128, target_update_interval=100,
                                      learn_starts=5000, hidden_dim=32, prior_update_interval=2000),
    "GridWorld": EvalAgentConfig(beta=2.0, lr=1e-3, batch_size=64, target_update_interval=10,
                                 learn_starts=0, hidden_dim=64, theta_mode="batch_estimate",
                                 tau_theta=0.01),
}


class EvalAgent:
    """EVAL learner; drive it with :meth:`train` or :func:`evalrl.replay.run_loop`.

    Three independent random streams are spawned from ``seed``: network
    initialization, action sampling and replay sampling. Updates therefore
    depend only on buffer contents and the replay stream.
    """

    def __init__(
        self,
        config: EvalAgentConfig,
        obs_dim: int,
        num_actions: int,
        seed: int = 0,
        buffer_capacity: int = 100_000,
        terminal_value: float = 1.0,
    ):
        self.config = config
        self.obs_dim = obs_dim
        self.num_actions = num_actions
        self.terminal_value = float(terminal_value)
        init_ss, act_ss, replay_ss, extra_ss = np.random.SeedSequence(seed).spawn(4)
        init_seeds = init_ss.generate_state(config.num_nets)
        self.online = [
            Mlp.build(obs_dim, num_actions, config.hidden_dim, "softplus", int(s), config.num_hidden)
            for s in init_seeds
        ]
        self.target = [net.copy() for net in self.online]
        self.optim = [AdamState.for_net(net, config.lr) for net in self.online]
        self.theta = 0.0
        self.buffer = ReplayBuffer(buffer_capacity, obs_dim, num_actions)
        self.act_rng = np.random.default_rng(act_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        self._extra_ss = extra_ss
        self.stats = PositivityStats()
        self.last_loss = float("nan")
        self.gradient_updates = 0
        self.env_steps = 0
        self.rescales = 0

    # priors: plain EVAL keeps a fixed uniform prior
    def prior_probs(self, observations: np.ndarray) -> np.ndarray:
        """Prior used in targets and the rate estimate."""
        return uniform_prior(observations, self.num_actions)

    def behavior_prior(self, observations: np.ndarray) -> np.ndarray:
        """Prior multiplying ``u`` when acting."""
        return self.prior_probs(observations)

    def u_values(self, observations: np.ndarray, nets: Sequence[Mlp] | None = None) -> np.ndarray:
        nets = self.online if nets is None else nets
        return aggregate([net.forward(observations) for net in nets], self.config.aggregator)

    def policy(self, observation: np.ndarray) -> np.ndarray:
        """Posterior ``pi(a|s) ~ pi0(a|s) u(s, a)`` from the online nets."""
        obs = np.atleast_2d(observation)
        w = self.behavior_prior(obs) * self.u_values(obs)
        p = w / self.stats.clamp(w.sum(axis=1, keepdims=True))
        return p[0] if np.ndim(observation) == 1 else p

    def act(self, observation: np.ndarray) -> int:
        if self.config.behavior == "prior":
            p = self.behavior_prior(np.atleast_2d(observation))[0]
        else:
            p = self.policy(observation)
        c = np.cumsum(p)
        return int(min(np.searchsorted(c, self.act_rng.random() * c[-1], side="right"), len(p) - 1))

    def greedy_action(self, observation: np.ndarray) -> int:
        obs = np.atleast_2d(observation)
        return int(np.argmax(self.behavior_prior(obs)[0] * self.u_values(obs)[0]))

    def observe(self, state, action: int, result: StepResult, step: int) -> None:
        self.buffer.add(state, action, result.reward, result.observation, result.terminated)
        self.env_steps = step
        if step > self.config.learn_starts:
            self.train_step()
        if step % self.config.target_update_interval == 0:
            self.update_targets()
        self._after_step(step)

    def _after_step(self, step: int) -> None:
        pass

    def update_targets(self) -> None:
        for tgt, net in zip(self.target, self.online):
            polyak_update(tgt, net, self.config.tau_psi)

    def _extra_gradient_step(self, batch: Batch) -> None:
        pass

    def train_step(self) -> None:
        """One environment step's worth of minibatch updates."""
        cfg = self.config
        estimates = []
        losses = []
        peak = 0.0
        rows = np.arange(cfg.batch_size)
        for _ in range(cfg.gradient_steps):
            batch = self.buffer.sample(cfg.batch_size, self.replay_rng)
            next_prior = self.prior_probs(batch.next_states)
            targets = td_target(batch, self.target, next_prior, self.theta, cfg.beta,
                                cfg.aggregator, self.terminal_value)
            peak = max(peak, float(targets.max()))
            # Adam is invariant to the loss scale except through eps; dividing by the
            # mean squared target keeps it so when the eigenvector's scale drifts
            scale = float(np.mean(targets * targets)) if cfg.normalize_loss else 1.0
            if not scale > 0:
                scale = 1.0
            for net, opt in zip(self.online, self.optim):
                u = net.forward(batch.states, keep_cache=True)
                diff = u[rows, batch.actions] - targets
                value = 0.5 * float(np.mean(diff * diff))
                if not np.isfinite(value):
                    raise TrainingDiverged("non-finite TD loss", [n.copy() for n in self.target],
                                           self.theta, self.env_steps)
                losses.append(value)
                g = np.zeros_like(u)
                g[rows, batch.actions] = diff / (cfg.batch_size * scale)
                adam_step(net, net.backward(g), opt)
            self._extra_gradient_step(batch)
            if cfg.theta_mode == "batch_estimate":
                estimates.append(theta_batch_estimate(batch, self.online, next_prior, cfg.beta,
                                                      cfg.aggregator, self.terminal_value, self.stats,
                                                      pooled=cfg.theta_estimator == "pooled"))
            self.gradient_updates += 1
        self.last_loss = float(np.mean(losses))
        if self.terminal_value == 0.0 and 0.0 < peak < RESCALE_BELOW:
            self.rescale(RESCALE_FACTOR)
        if estimates:
            z = float(np.mean(estimates))
            if not z > 0 or not np.isfinite(z):
                raise TrainingDiverged("invalid rate estimate", [n.copy() for n in self.target],
                                       self.theta, self.env_steps)
            self.theta = update_theta(self.theta, np.log(z) / cfg.beta, cfg.tau_theta)

    def rescale(self, factor: float) -> None:
        """Multiply the output of every u net, online and target, by ``factor``.

        Shifts the final bias by ``log(factor)``, which is an exact rescaling
        while the softplus head is in its exponential regime (outputs far
        below 1, as the trigger level ensures).
        """
        shift = float(np.log(factor))
        for net in {id(n): n for n in (*self.online, *self.target)}.values():
            net.params[-1] = net.params[-1] + shift
        self.rescales += 1

    def train(self, env, sample_budget: int, eval_hook=None) -> list:
        return run_loop(self, env, sample_budget, eval_hook)

    def save(self, path) -> None:
        save_checkpoint(path, self.online + self.target,
                        {"theta": self.theta, "env_steps": self.env_steps, "num_nets": len(self.online)})

    def load(self, path) -> None:
        nets, extra = load_checkpoint(path)
        n = int(extra["num_nets"])
        if len(nets) != 2 * n or n != len(self.online):
            raise ValueError("checkpoint does not match the agent's network count")
        for dst, src in zip(self.online + self.target, nets):
            if not dst.same_architecture(src):
                raise ValueError("checkpoint architecture mismatch")
            dst.params = src.params
        self.theta = float(extra["theta"])
        self.env_steps = int(extra["env_steps"])
