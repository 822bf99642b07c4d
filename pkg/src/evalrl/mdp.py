"""Deterministic tabular MDPs and exact policy-evaluation oracles.

State-action pairs are flattened as ``index = s * num_actions + a``. Every
chain matrix in this package is *column*-stochastic: entry
``[(s', a'), (s, a)]`` is the probability of moving from ``(s, a)`` to
``(s', a')``, so stationary distributions are right eigenvectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from ._power import ConvergenceError, perron

__all__ = [
    "TabularMDP",
    "PolicyEvaluation",
    "ChainDiagnostics",
    "ConvergenceError",
    "shift_rewards",
    "uniform_policy",
    "check_policy",
    "induced_chain",
    "stationary_distribution",
    "pair_occupancy",
    "reward_rate",
    "entropy_reg_rate",
    "differential_q",
    "evaluate_policy",
    "max_mean_cycle",
    "check_irreducible_aperiodic",
    "parse_mdp",
    "format_mdp",
    "load_mdp",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000


@dataclass(frozen=True)
class TabularMDP:
    """Deterministic finite MDP.

    Parameters
    ----------
    next_state : (S, A) int array
        Successor state of every state-action pair.
    reward : (S, A) float array
        Reward collected when taking ``a`` in ``s``.
    """

    next_state: np.ndarray
    reward: np.ndarray

    def __post_init__(self):
        nxt = np.array(self.next_state, dtype=np.int64)
        rew = np.array(self.reward, dtype=np.float64)
        if nxt.ndim != 2 or nxt.shape[0] < 1 or nxt.shape[1] < 1:
            raise ValueError(f"next_state must be a non-empty (S, A) table, got {nxt.shape}")
        if rew.shape != nxt.shape:
            raise ValueError(f"reward shape {rew.shape} != next_state shape {nxt.shape}")
        if np.any(nxt < 0) or np.any(nxt >= nxt.shape[0]):
            raise ValueError("next_state contains an invalid state index")
        nxt.setflags(write=False)
        rew.setflags(write=False)
        object.__setattr__(self, "next_state", nxt)
        object.__setattr__(self, "reward", rew)

    @property
    def num_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def num_actions(self) -> int:
        return self.next_state.shape[1]

    @property
    def num_pairs(self) -> int:
        return self.next_state.size


def shift_rewards(mdp: TabularMDP) -> tuple[TabularMDP, float]:
    """Shift rewards so the largest is 0. Returns the new MDP and the offset.

    The original reward is recovered as ``shifted + offset``; reward rates
    shift by the same constant and optimal policies are unchanged.
    """
    if not np.all(np.isfinite(mdp.reward)):
        raise ValueError("rewards must be finite")
    offset = float(mdp.reward.max())
    return TabularMDP(mdp.next_state, mdp.reward - offset), offset


def uniform_policy(num_states: int, num_actions: int) -> np.ndarray:
    return np.full((num_states, num_actions), 1.0 / num_actions)


def check_policy(probs, shape=None, full_support: bool = False) -> np.ndarray:
    """Validate a (S, A) row-stochastic table and return it as a float array."""
    pi = np.asarray(probs, dtype=np.float64)
    if pi.ndim != 2:
        raise ValueError(f"policy must be a (S, A) table, got shape {pi.shape}")
    if shape is not None and pi.shape != tuple(shape):
        raise ValueError(f"policy shape {pi.shape} does not match MDP shape {tuple(shape)}")
    if np.any(pi < 0) or not np.all(np.isfinite(pi)):
        raise ValueError("policy entries must be finite and non-negative")
    if np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("policy rows must sum to 1")
    if full_support and np.any(pi <= 0):
        raise ValueError("policy must have full support")
    return pi


def induced_chain(mdp: TabularMDP, policy) -> np.ndarray:
    """Column-stochastic state-action chain ``P[(s',a'), (s,a)] = 1{s'=next(s,a)} pi(a'|s')``."""
    pi = check_policy(policy, mdp.next_state.shape)
    n_a = mdp.num_actions
    n = mdp.num_pairs
    chain = np.zeros((n, n))
    cols = np.arange(n)
    succ = mdp.next_state.reshape(-1)
    for a_next in range(n_a):
        chain[succ * n_a + a_next, cols] = pi[succ, a_next]
    return chain


def stationary_distribution(chain, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Stationary distribution ``nu`` with ``chain @ nu = nu`` and ``sum(nu) = 1``.

    Shifted power iteration, so periodic chains converge as well. Raises
    :class:`ConvergenceError` when the iteration budget runs out.
    """
    p = np.asarray(chain, dtype=np.float64)
    if np.max(np.abs(p.sum(axis=0) - 1.0)) > 1e-10:
        raise ValueError("chain must be column-stochastic")
    res = perron(p, tol=tol, max_iter=max_iter, need_left=False)
    return res.right


def pair_occupancy(mdp: TabularMDP, policy) -> np.ndarray:
    """Stationary distribution over flat state-action pairs.

    Pairs the policy never selects are transient; their residual mass from
    the iterative solve is set to exactly zero.
    """
    pi = check_policy(policy, mdp.next_state.shape)
    nu = stationary_distribution(induced_chain(mdp, pi))
    nu = np.where(pi.reshape(-1) > 0, nu, 0.0)
    return nu / nu.sum()


def reward_rate(mdp: TabularMDP, policy, nu=None) -> float:
    """Long-run average reward ``rho = E_nu[r]`` of a stationary policy."""
    if nu is None:
        nu = pair_occupancy(mdp, policy)
    return float(nu @ mdp.reward.reshape(-1))


def _kl_cost(policy: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """Per-pair ``log(pi/pi0)`` with the ``0 log 0 = 0`` convention."""
    if np.any((policy > 0) & (prior <= 0)):
        raise ValueError("policy puts mass where the prior has none: infinite KL")
    out = np.zeros_like(policy)
    mask = policy > 0
    out[mask] = np.log(policy[mask]) - np.log(prior[mask])
    return out


def entropy_reg_rate(mdp: TabularMDP, policy, prior, beta: float, nu=None) -> float:
    """Entropy-regularized reward rate ``theta = E_nu[r - log(pi/pi0)/beta]``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    pi = check_policy(policy, mdp.next_state.shape)
    pi0 = check_policy(prior, mdp.next_state.shape)
    if nu is None:
        nu = pair_occupancy(mdp, pi)
    cost = mdp.reward - _kl_cost(pi, pi0) / beta
    # pairs with pi = 0 carry no stationary mass
    return float(nu @ np.where(pi > 0, cost, 0.0).reshape(-1))


def differential_q(mdp: TabularMDP, policy, rho: float, prior=None, beta=None, nu=None) -> np.ndarray:
    """Centered differential action values of ``policy``.

    Solves ``q = r - rho + P^T q`` under ``E_nu[q] = 0`` through the
    non-singular bordered system ``(I - P^T + 1 nu^T) q = r - rho``. When
    ``prior`` and ``beta`` are given the entropy-regularized variant is solved,
    with ``r`` replaced by ``r - log(pi/pi0)/beta`` and ``rho`` by ``theta``.
    """
    pi = check_policy(policy, mdp.next_state.shape)
    chain = induced_chain(mdp, pi)
    if nu is None:
        nu = stationary_distribution(chain)
    r = mdp.reward.reshape(-1).copy()
    if prior is not None:
        if beta is None or beta <= 0:
            raise ValueError("beta must be positive for the regularized variant")
        pi0 = check_policy(prior, mdp.next_state.shape)
        r = r - np.where(pi > 0, _kl_cost(pi, pi0), 0.0).reshape(-1) / beta
    n = r.size
    system = np.eye(n) - chain.T + np.outer(np.ones(n), nu)
    q = np.linalg.solve(system, r - rho)
    resid = q - (r - rho + chain.T @ q)
    if np.max(np.abs(resid)) > 1e-8 * max(1.0, np.max(np.abs(q))):
        raise ValueError("rho is inconsistent with the policy's reward rate")
    return q.reshape(mdp.next_state.shape)


@dataclass(frozen=True)
class PolicyEvaluation:
    rho: float
    theta_pi: float
    nu: np.ndarray
    q_diff: np.ndarray


def evaluate_policy(mdp: TabularMDP, policy, prior=None, beta: float | None = None) -> PolicyEvaluation:
    """Bundle of exact evaluation quantities; ``theta_pi`` equals ``rho`` without a prior."""
    pi = check_policy(policy, mdp.next_state.shape)
    nu = pair_occupancy(mdp, pi)
    rho = reward_rate(mdp, pi, nu=nu)
    if prior is None:
        return PolicyEvaluation(rho, rho, nu, differential_q(mdp, pi, rho, nu=nu))
    theta = entropy_reg_rate(mdp, pi, prior, beta, nu=nu)
    q = differential_q(mdp, pi, theta, prior=prior, beta=beta, nu=nu)
    return PolicyEvaluation(rho, theta, nu, q)


def max_mean_cycle(mdp: TabularMDP) -> float:
    """Best reward rate over deterministic policies (Karp's maximum mean cycle).

    Every deterministic policy eventually loops on a cycle of the state graph,
    so on a strongly connected graph the best rate is the largest mean edge
    weight over its cycles.
    """
    n = mdp.num_states
    w = np.full((n, n), -np.inf)
    for s in range(n):
        for a in range(mdp.num_actions):
            t = mdp.next_state[s, a]
            w[s, t] = max(w[s, t], mdp.reward[s, a])
    adj = [np.flatnonzero(np.isfinite(w[s])) for s in range(n)]
    radj = [np.flatnonzero(np.isfinite(w[:, s])) for s in range(n)]
    if np.any(_reach(adj, 0) < 0) or np.any(_reach(radj, 0) < 0):
        raise ValueError("state graph is not strongly connected")
    # walks from a virtual source joined to every state by a zero-weight edge
    d = np.full((n + 1, n), -np.inf)
    d[0] = 0.0
    for k in range(1, n + 1):
        d[k] = np.max(d[k - 1][:, None] + w, axis=0)
    with np.errstate(invalid="ignore"):
        ratios = (d[n][None, :] - d[:n]) / (n - np.arange(n))[:, None]
    ratios = np.where(np.isfinite(d[:n]), ratios, np.inf)
    best = np.min(ratios, axis=0)
    return float(np.max(best[np.isfinite(d[n])]))


@dataclass(frozen=True)
class ChainDiagnostics:
    irreducible: bool
    aperiodic: bool
    period: int
    unreachable_pair: tuple[int, int] | None = None
    notes: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.irreducible and self.aperiodic


def _reach(adj: list[np.ndarray], start: int) -> np.ndarray:
    seen = np.zeros(len(adj), dtype=bool)
    seen[start] = True
    level = np.full(len(adj), -1)
    level[start] = 0
    frontier = [start]
    while frontier:
        nxt = []
        for node in frontier:
            for m in adj[node]:
                if not seen[m]:
                    seen[m] = True
                    level[m] = level[node] + 1
                    nxt.append(m)
        frontier = nxt
    return level


def check_irreducible_aperiodic(chain) -> ChainDiagnostics:
    """Irreducibility by reachability over the support graph, period by BFS levels.

    The period of an irreducible chain is the gcd of ``level[i] + 1 - level[j]``
    over all support edges ``i -> j``, with levels from a breadth-first search.
    """
    p = np.asarray(chain)
    n = p.shape[0]
    # column-stochastic: edge i -> j when p[j, i] > 0
    forward = [np.flatnonzero(p[:, i] > 0) for i in range(n)]
    backward = [np.flatnonzero(p[j, :] > 0) for j in range(n)]
    fwd_level = _reach(forward, 0)
    bwd_level = _reach(backward, 0)
    unreachable = None
    if np.any(fwd_level < 0):
        unreachable = (0, int(np.flatnonzero(fwd_level < 0)[0]))
    elif np.any(bwd_level < 0):
        unreachable = (int(np.flatnonzero(bwd_level < 0)[0]), 0)
    if unreachable is not None:
        return ChainDiagnostics(False, False, 0, unreachable,
                                [f"state-action {unreachable[1]} unreachable from {unreachable[0]}"])
    period = 0
    for i in range(n):
        for j in forward[i]:
            period = math.gcd(period, int(fwd_level[i] + 1 - fwd_level[j]))
    period = abs(period)
    notes = [] if period == 1 else [f"chain is periodic with period {period}"]
    return ChainDiagnostics(True, period == 1, period, None, notes)


def parse_mdp(text: str) -> TabularMDP:
    """Parse ``states N actions M`` followed by ``N*M`` lines ``s a next_state reward``."""
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    numbered = [(i + 1, ln) for i, ln in enumerate(lines) if ln]
    if not numbered:
        raise ValueError("empty MDP description")
    lineno, header = numbered[0]
    tok = header.split()
    if len(tok) != 4 or tok[0] != "states" or tok[2] != "actions":
        raise ValueError(f"line {lineno}: expected 'states N actions M'")
    n_s, n_a = int(tok[1]), int(tok[3])
    if n_s < 1 or n_a < 1:
        raise ValueError(f"line {lineno}: need at least one state and one action")
    nxt = np.full((n_s, n_a), -1, dtype=np.int64)
    rew = np.zeros((n_s, n_a))
    for lineno, ln in numbered[1:]:
        tok = ln.split()
        if len(tok) != 4:
            raise ValueError(f"line {lineno}: expected 's a next_state reward'")
        s, a, s_next = int(tok[0]), int(tok[1]), int(tok[2])
        if not (0 <= s < n_s and 0 <= a < n_a):
            raise ValueError(f"line {lineno}: pair ({s}, {a}) out of range")
        if nxt[s, a] >= 0:
            raise ValueError(f"line {lineno}: duplicate entry for ({s}, {a})")
        if not 0 <= s_next < n_s:
            raise ValueError(f"line {lineno}: next_state {s_next} out of range")
        nxt[s, a] = s_next
        rew[s, a] = float(tok[3])
    missing = np.argwhere(nxt < 0)
    if missing.size:
        s, a = missing[0]
        raise ValueError(f"missing entry for ({s}, {a})")
    return TabularMDP(nxt, rew)


def format_mdp(mdp: TabularMDP) -> str:
    out = [f"states {mdp.num_states} actions {mdp.num_actions}"]
    for s in range(mdp.num_states):
        for a in range(mdp.num_actions):
            out.append(f"{s} {a} {mdp.next_state[s, a]} {float(mdp.reward[s, a])!r}")
    return "\n".join(out) + "\n"


def load_mdp(path: Union[str, Path]) -> TabularMDP:
    return parse_mdp(Path(path).read_text())
