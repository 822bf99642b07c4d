"""Posterior policy iteration: repeatedly replace the prior with the posterior.

Each iteration solves the regularized problem for the current prior and uses
the optimal policy ``pi ~ pi0 * u`` as the next prior. The iterates sharpen
toward the greedy optimum of the unregularized average-reward problem.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_softmax

from .agent import EvalAgent, EvalAgentConfig, PositivityStats, aggregate
from .mdp import TabularMDP, check_policy, evaluate_policy, uniform_policy
from .nn import AdamState, Mlp, adam_step, load_checkpoint, polyak_update, save_checkpoint
from .replay import Batch
from .spectral import solve_erar

__all__ = [
    "PRIOR_FLOOR",
    "PpiConfig",
    "PpiResult",
    "PpiAgent",
    "posterior_policy",
    "prior_loss",
    "ppi_step_exact",
    "ppi_solve_exact",
    "policy_kl",
]

# smallest prior probability kept by exact PPI; smaller values are raised to it
PRIOR_FLOOR = 1e-250


def posterior_policy(u_values: np.ndarray, prior_probs: np.ndarray,
                     stats: PositivityStats | None = None) -> np.ndarray:
    """Row-normalized ``prior * u``; ``stats`` floors and counts tiny normalizers."""
    u_values = np.asarray(u_values, dtype=np.float64)
    if np.any(u_values < 0):
        raise ValueError("u values must be non-negative")
    w = np.asarray(prior_probs, dtype=np.float64) * u_values
    z = w.sum(axis=-1, keepdims=True)
    if stats is not None:
        z = stats.clamp(z)
    elif np.any(z <= 0):
        raise ValueError("prior * u has an all-zero row")
    return w / z


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def _kl_to_logits(p: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """Row-wise ``KL(p || softmax(logits))``, finite even where the softmax underflows."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - log_softmax(logits, axis=-1)), 0.0)
    return terms.sum(axis=-1)


def prior_loss(states: np.ndarray, u_nets, prior_target: Mlp, prior_online: Mlp,
               aggregator: str = "max") -> float:
    """Mean ``KL(posterior || online prior)`` with the posterior held fixed."""
    u = aggregate([net.forward(states) for net in u_nets], aggregator)
    post = posterior_policy(u, prior_target.forward(states))
    value = float(np.mean(_kl_to_logits(post, prior_online.pre_activation(states))))
    if not np.isfinite(value):
        raise FloatingPointError("non-finite prior loss")
    return value


def policy_kl(p: np.ndarray, q: np.ndarray) -> float:
    """Largest per-state ``KL(p || q)``."""
    return float(np.max(_kl_rows(np.asarray(p), np.asarray(q))))


def ppi_step_exact(mdp: TabularMDP, prior, beta: float, tol: float = 1e-12) -> np.ndarray:
    """One exact iteration: the optimal regularized policy for ``prior``."""
    pi0 = check_policy(prior, mdp.next_state.shape, full_support=True)
    return _solve(mdp, pi0, beta, tol).policy


def _solve(mdp: TabularMDP, prior: np.ndarray, beta: float, tol: float):
    with warnings.catch_warnings():
        # sharpened priors close the spectral gap; only the policy is used here
        warnings.filterwarnings("ignore", message="near-degenerate")
        return solve_erar(mdp, prior, beta, tol=tol)


@dataclass(frozen=True)
class PpiResult:
    policy: np.ndarray
    greedy: np.ndarray  # (S,) action indices, lowest index on ties
    rate: float  # unregularized reward rate of the greedy policy
    iterations: int
    converged: bool
    last_kl: float
    thetas: list[float] = field(default_factory=list)
    rates: list[float] = field(default_factory=list)


def ppi_solve_exact(mdp: TabularMDP, beta: float, num_iters: int = 100, prior=None,
                    kl_tol: float = 1e-12, tol: float = 1e-12) -> PpiResult:
    """Iterate :func:`ppi_step_exact` until consecutive priors are ``kl_tol`` apart.

    Prior entries are floored at ``PRIOR_FLOOR`` and renormalized so the
    solver keeps a full-support prior after probabilities underflow.
    ``thetas[k]`` is the regularized rate solved at iteration ``k`` and
    ``rates[k]`` the unregularized rate of the policy it returns. ``tol`` is
    the eigen-solver tolerance.
    """
    if num_iters < 1:
        raise ValueError("num_iters must be >= 1")
    pi = uniform_policy(mdp.num_states, mdp.num_actions) if prior is None else check_policy(
        prior, mdp.next_state.shape, full_support=True)
    thetas, rates = [], []
    kl = np.inf
    converged = False
    it = 0
    for it in range(1, num_iters + 1):
        sol = _solve(mdp, pi, beta, tol)
        new = sol.policy
        thetas.append(sol.theta)
        rates.append(evaluate_policy(mdp, new).rho)
        new = np.maximum(new, PRIOR_FLOOR)
        new /= new.sum(axis=1, keepdims=True)
        kl = policy_kl(new, pi)
        pi = new
        if kl <= kl_tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"exact PPI stopped after {num_iters} iterations with KL {kl:.3e} "
                      f"between consecutive priors", RuntimeWarning, stacklevel=2)
    greedy = np.argmax(pi, axis=1)
    onehot = np.zeros_like(pi)
    onehot[np.arange(mdp.num_states), greedy] = 1.0
    rate = evaluate_policy(mdp, onehot).rho
    return PpiResult(pi, greedy, rate, it, converged, kl, thetas, rates)


@dataclass(frozen=True)
class PpiConfig:
    """Prior-network settings; ``None`` fields follow the u networks."""

    prior_update_interval: int = 500
    tau_phi: float = 1.0
    hidden_dim: int | None = None
    lr: float | None = None

    def __post_init__(self):
        if self.prior_update_interval < 1:
            raise ValueError("prior_update_interval must be >= 1")
        if not 0.0 < self.tau_phi <= 1.0:
            raise ValueError("tau_phi must lie in (0, 1]")
        if self.lr is not None and not self.lr > 0:
            raise ValueError("lr must be positive")

    @classmethod
    def preset(cls, env_name: str, **overrides) -> "PpiConfig":
        """Tuned settings where available, else defaults that follow the u networks."""
        return replace(PPI_PRESETS.get(env_name, cls()), **overrides)


# the prior must track the posterior faster than the u networks move
PPI_PRESETS = {
    "CartPole-v1": PpiConfig(prior_update_interval=500, lr=1e-2),
}


class PpiAgent(EvalAgent):
    """EVAL with a learned prior.

    Targets and the rate estimate use the target prior; acting and greedy
    evaluation use the online prior. Every gradient step also moves the
    online prior toward the posterior ``target_prior * u_online``.
    """

    def __init__(self, config: EvalAgentConfig, obs_dim: int, num_actions: int, seed: int = 0,
                 buffer_capacity: int = 100_000, terminal_value: float = 1.0,
                 ppi: PpiConfig | None = None):
        super().__init__(config, obs_dim, num_actions, seed, buffer_capacity, terminal_value)
        self.ppi = ppi or PpiConfig(prior_update_interval=config.prior_update_interval)
        hidden = self.ppi.hidden_dim or config.hidden_dim
        prior_seed = int(self._extra_ss.generate_state(1)[0])
        self.prior_online = Mlp.build(obs_dim, num_actions, hidden, "softmax", prior_seed, config.num_hidden)
        self.prior_target = self.prior_online.copy()
        self.prior_optim = AdamState.for_net(self.prior_online, self.ppi.lr or config.lr)
        self.last_prior_loss = float("nan")

    def prior_probs(self, observations: np.ndarray) -> np.ndarray:
        return self.prior_target.forward(np.atleast_2d(observations))

    def behavior_prior(self, observations: np.ndarray) -> np.ndarray:
        return self.prior_online.forward(np.atleast_2d(observations))

    def _extra_gradient_step(self, batch: Batch) -> None:
        states = batch.states
        post = posterior_policy(self.u_values(states), self.prior_target.forward(states), self.stats)
        p = self.prior_online.forward(states, keep_cache=True)
        self.last_prior_loss = float(np.mean(_kl_to_logits(post, self.prior_online.cached_pre_activation)))
        # gradient of the KL with respect to the logits is (p - post) / B
        grads = self.prior_online.backward_logits((p - post) / len(batch))
        adam_step(self.prior_online, grads, self.prior_optim)

    def _after_step(self, step: int) -> None:
        if step % self.ppi.prior_update_interval == 0:
            polyak_update(self.prior_target, self.prior_online, self.ppi.tau_phi)

    def save(self, path) -> None:
        save_checkpoint(path, self.online + self.target + [self.prior_online, self.prior_target],
                        {"theta": self.theta, "env_steps": self.env_steps, "num_nets": len(self.online)})

    def load(self, path) -> None:
        nets, extra = load_checkpoint(path)
        n = int(extra["num_nets"])
        if len(nets) != 2 * n + 2 or n != len(self.online):
            raise ValueError("checkpoint does not match the agent's network count")
        mine = self.online + self.target + [self.prior_online, self.prior_target]
        for dst, src in zip(mine, nets):
            if not dst.same_architecture(src):
                raise ValueError("checkpoint architecture mismatch")
            dst.params = src.params
        self.theta = float(extra["theta"])
        self.env_steps = int(extra["env_steps"])
