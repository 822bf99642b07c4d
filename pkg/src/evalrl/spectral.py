"""Exact solution of entropy-regularized average-reward MDPs via the tilted matrix.

For a deterministic MDP, prior ``pi0`` and inverse temperature ``beta`` the
tilted matrix is

    P~[(s',a'), (s,a)] = 1{s' = next(s,a)} * pi0(a'|s') * exp(beta * r(s,a)).

Its Perron root is ``exp(beta * theta)`` with ``theta`` the optimal regularized
reward rate; the left Perron vector ``u`` gives ``Q = log(u) / beta`` and the
optimal policy ``pi ~ pi0 * u``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
from scipy.special import logsumexp

from ._power import ConvergenceError, perron, perron_log
from .mdp import TabularMDP, check_policy, uniform_policy

__all__ = [
    "TiltedMatrix",
    "SpectralSolution",
    "Eigenpair",
    "SecondEigen",
    "SaState",
    "ConvergenceError",
    "LOG_SPACE_THRESHOLD",
    "build_tilted_matrix",
    "dominant_left",
    "dominant_right",
    "second_eigenvalue",
    "gap_discount",
    "mixing_time",
    "extract_q",
    "extract_policy",
    "solve_erar",
    "sa_learn_tabular",
]

# beta * max|r| above which exp(beta * r) is never formed directly
LOG_SPACE_THRESHOLD = 500.0


@dataclass(frozen=True)
class TiltedMatrix:
    mdp: TabularMDP
    prior: np.ndarray
    beta: float
    log_entries: np.ndarray
    log_space: bool

    @property
    def entries(self) -> np.ndarray:
        if self.log_space:
            raise OverflowError("tilted matrix is held in log space; use log_entries")
        return np.exp(self.log_entries)

    @property
    def size(self) -> int:
        return self.log_entries.shape[0]


def build_tilted_matrix(mdp: TabularMDP, prior, beta: float) -> TiltedMatrix:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    pi0 = check_policy(prior, mdp.next_state.shape, full_support=True)
    if np.any(mdp.reward > 0):
        raise ValueError("rewards must be non-positive; call shift_rewards first")
    n_a = mdp.num_actions
    n = mdp.num_pairs
    log_m = np.full((n, n), -np.inf)
    cols = np.arange(n)
    succ = mdp.next_state.reshape(-1)
    scaled = beta * mdp.reward.reshape(-1)
    for a_next in range(n_a):
        log_m[succ * n_a + a_next, cols] = np.log(pi0[succ, a_next]) + scaled
    log_space = bool(beta * np.max(np.abs(mdp.reward)) > LOG_SPACE_THRESHOLD)
    log_m.setflags(write=False)
    return TiltedMatrix(mdp, pi0, float(beta), log_m, log_space)


MatrixLike = Union[TiltedMatrix, np.ndarray]


class Eigenpair(NamedTuple):
    value: float
    vector: np.ndarray
    iterations: int
    residual: float


class SecondEigen(NamedTuple):
    magnitude: float
    xi: float
    degenerate: bool
    iterations: int


def _dense(matrix: MatrixLike) -> np.ndarray:
    if isinstance(matrix, TiltedMatrix):
        return matrix.entries
    return np.asarray(matrix, dtype=np.float64)


def _perron_any(matrix: MatrixLike, tol: float, max_iter: int):
    """Returns ``(log_lambda, log_right, log_left, iterations, residual)``."""
    if isinstance(matrix, TiltedMatrix) and matrix.log_space:
        res = perron_log(matrix.log_entries, tol=tol, max_iter=max_iter)
        return res.value, res.right, res.left, res.iterations, res.residual
    res = perron(_dense(matrix), tol=tol, max_iter=max_iter)
    with np.errstate(divide="ignore"):
        return np.log(res.value), np.log(res.right), np.log(res.left), res.iterations, res.residual


def _check_perron(vector: np.ndarray, value: float) -> None:
    if not (value > 0 and np.all(vector > 0)):
        raise ConvergenceError("Perron vector is not strictly positive", 0, np.inf)


def dominant_left(matrix: MatrixLike, tol: float = 1e-10, max_iter: int = 100_000) -> Eigenpair:
    """Perron root ``lambda1`` and left eigenvector ``u`` (``P^T u = lambda1 u``), L1-normalized."""
    log_lam, _, log_u, it, res = _perron_any(matrix, tol, max_iter)
    lam, u = float(np.exp(log_lam)), np.exp(log_u)
    _check_perron(u, lam)
    return Eigenpair(lam, u, it, res)


def dominant_right(matrix: MatrixLike, tol: float = 1e-10, max_iter: int = 100_000) -> Eigenpair:
    """Perron root ``lambda1`` and right eigenvector ``v`` (``P v = lambda1 v``), L1-normalized."""
    log_lam, log_v, _, it, res = _perron_any(matrix, tol, max_iter)
    lam, v = float(np.exp(log_lam)), np.exp(log_v)
    _check_perron(v, lam)
    return Eigenpair(lam, v, it, res)


def _doob_transform(log_matrix: np.ndarray, log_lambda: float, log_u: np.ndarray) -> np.ndarray:
    """Column-stochastic ``T[i, j] = u_i P[i, j] / (lambda u_j)``, similar to ``P / lambda``."""
    return np.exp(log_u[:, None] + log_matrix - log_lambda - log_u[None, :])


def second_eigenvalue(
    matrix: MatrixLike,
    lambda1: float,
    u: np.ndarray,
    v: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 200,
    beta: float | None = None,
    degenerate_tol: float = 1e-6,
) -> SecondEigen:
    """Modulus of the sub-dominant eigenvalue.

    Wielandt deflation ``P - lambda1 v u^T`` (``u^T v = 1``) carried out on the
    similar column-stochastic matrix ``T = diag(u) P diag(u)^-1 / lambda1``, where
    it reads ``T - (u*v) 1^T``. The spectral radius of the deflated operator is
    taken from ``|D^N|^(1/N)`` with ``N`` doubled by squaring at every sweep and
    the dominant direction projected out after each product. ``max_iter`` caps
    the number of squarings.

    Returns the modulus ``|lambda2|`` and ``xi = log|lambda2| / beta`` (``nan``
    when ``beta`` is not given). ``degenerate`` flags a 1x1 problem or a
    relative gap below ``degenerate_tol``.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if isinstance(matrix, TiltedMatrix):
        log_m = matrix.log_entries
    else:
        with np.errstate(divide="ignore"):
            log_m = np.log(np.asarray(matrix, dtype=np.float64))
    with np.errstate(divide="ignore"):
        ratio, it = _second_ratio(log_m, np.log(lambda1), np.log(u), np.log(v), tol, max_iter)
    lam2 = ratio * lambda1
    with np.errstate(divide="ignore"):
        xi = float(np.log(lam2) / beta) if beta else np.nan
    return SecondEigen(float(lam2), xi, _flag_degenerate(ratio, degenerate_tol, u.size), it)


def _flag_degenerate(ratio: float, degenerate_tol: float, n: int) -> bool:
    if n == 1:
        return True
    degenerate = ratio > 1.0 - degenerate_tol
    if degenerate:
        warnings.warn(
            f"near-degenerate spectrum: |lambda2|/lambda1 = {ratio:.12f}; gap estimate unreliable",
            RuntimeWarning,
            stacklevel=3,
        )
    return bool(degenerate)


def _second_ratio(log_m, log_lambda, log_u, log_v, tol, max_iter) -> tuple[float, int]:
    """``|lambda2| / lambda1`` from logs of the matrix and both Perron vectors."""
    n = log_u.size
    if n == 1:
        return 0.0, 0
    if not (np.all(np.isfinite(log_u)) and np.all(np.isfinite(log_v))):
        raise ValueError("Perron vectors must be strictly positive")
    log_w = log_u + log_v
    w = np.exp(log_w - logsumexp(log_w))
    t = _doob_transform(log_m, log_lambda, log_u)

    def project(x):
        x = x - np.outer(w, x.sum(axis=0))
        return x - np.outer(x @ w, np.ones(n))

    d = project(t)
    norm = np.abs(d).max()
    log_norm = np.log(norm) if norm > 0 else -np.inf
    power = 1
    estimate = np.exp(log_norm)
    it = 0
    for it in range(1, max_iter + 1):
        if norm == 0:
            estimate = 0.0
            break
        d /= norm
        d = project(d @ d)
        norm = np.abs(d).max()
        power *= 2
        log_norm = 2 * log_norm + (np.log(norm) if norm > 0 else -np.inf)
        new = float(np.exp(log_norm / power))
        done = abs(new - estimate) <= tol
        estimate = new
        if done:
            break
    else:
        raise ConvergenceError("sub-dominant eigenvalue estimate did not settle", max_iter, np.inf)
    return min(estimate, 1.0), it


def gap_discount(lambda1: float, lambda2_magnitude: float) -> float:
    """Per-step decay ratio of the sub-dominant mode, ``|lambda2| / lambda1 = exp(beta (xi - theta))``."""
    if not lambda1 > 0 or lambda2_magnitude < 0 or lambda2_magnitude > lambda1:
        raise ValueError("need lambda1 > 0 and 0 <= |lambda2| <= lambda1")
    return float(lambda2_magnitude / lambda1)


def mixing_time(lambda1: float, lambda2_magnitude: float) -> float:
    """``1 / (beta theta - beta xi)``; zero for a rank-one operator, ``inf`` with no gap."""
    gap = np.log(lambda1) - (np.log(lambda2_magnitude) if lambda2_magnitude > 0 else -np.inf)
    return float(1.0 / gap) if gap > 0 else np.inf


def extract_q(u, beta: float) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0):
        raise ValueError("u must be strictly positive")
    return np.log(u) / beta


def extract_policy(u, prior) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    pi0 = np.asarray(prior, dtype=np.float64)
    if np.any(u <= 0):
        raise ValueError("u must be strictly positive")
    w = pi0 * u.reshape(pi0.shape)
    return w / w.sum(axis=1, keepdims=True)


def _exp_checked(log_x: np.ndarray, name: str) -> np.ndarray:
    with np.errstate(over="ignore", under="ignore"):
        x = np.exp(log_x)
    if not np.all(np.isfinite(x)) or np.any(x == 0):
        raise OverflowError(f"{name} is not representable in float64; use log_{name}")
    return x


@dataclass(frozen=True)
class SpectralSolution:
    """Exact solution of an entropy-regularized average-reward MDP.

    ``u`` and ``v`` are (S, A) tables normalized so that ``sum(v) = 1`` and
    ``sum(u * v) = 1``; ``u * v`` is the optimal state-action occupancy. Both
    are stored as logs; reading ``u`` or ``v`` raises ``OverflowError`` when an
    entry is outside the float range (large ``beta``).
    """

    theta: float
    xi: float
    lambda1: float
    lambda2: float
    mixing_time: float
    gap_discount: float
    degenerate: bool
    iterations: int
    residual: float
    beta: float
    prior: np.ndarray
    log_u: np.ndarray
    log_v: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return _exp_checked(self.log_u, "u")

    @property
    def v(self) -> np.ndarray:
        return _exp_checked(self.log_v, "v")

    @property
    def q(self) -> np.ndarray:
        return self.log_u / self.beta

    @property
    def policy(self) -> np.ndarray:
        logits = np.log(self.prior) + self.log_u
        return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))

    @property
    def occupancy(self) -> np.ndarray:
        return np.exp(self.log_u + self.log_v)


def solve_erar(
    mdp: TabularMDP,
    prior=None,
    beta: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> SpectralSolution:
    """Optimal rate, values and policy of an ERAR MDP from the tilted matrix's Perron pair."""
    if prior is None:
        prior = uniform_policy(mdp.num_states, mdp.num_actions)
    tilted = build_tilted_matrix(mdp, prior, beta)
    log_lam, log_v, log_u, iterations, residual = _perron_any(tilted, tol, max_iter)
    log_v = log_v - logsumexp(log_v)
    log_u = log_u - logsumexp(log_u + log_v)
    if not (np.all(np.isfinite(log_u)) and np.all(np.isfinite(log_v))):
        raise ConvergenceError("Perron vectors are not strictly positive", iterations, residual)
    lambda1 = float(np.exp(log_lam))
    ratio, _ = _second_ratio(tilted.log_entries, log_lam, log_u, log_v, tol, 200)
    degenerate = _flag_degenerate(ratio, 1e-6, log_u.size)
    with np.errstate(divide="ignore"):
        log_ratio = float(np.log(ratio))
    shape = mdp.next_state.shape
    log_u = log_u.reshape(shape)
    log_v = log_v.reshape(shape)
    log_u.setflags(write=False)
    log_v.setflags(write=False)
    return SpectralSolution(
        theta=float(log_lam / beta),
        xi=float((log_lam + log_ratio) / beta),
        lambda1=lambda1,
        lambda2=ratio * lambda1,
        mixing_time=float(1.0 / -log_ratio) if log_ratio < 0 else np.inf,
        gap_discount=ratio,
        degenerate=degenerate,
        iterations=iterations,
        residual=residual,
        beta=float(beta),
        prior=tilted.prior,
        log_u=log_u,
        log_v=log_v,
    )


@dataclass
class SaState:
    """Running state of the tabular stochastic-approximation learner."""

    u: np.ndarray
    theta: float
    alpha: float
    alpha_theta: float
    beta: float
    steps: int = 0
    renormalizations: int = 0

    @property
    def direction(self) -> np.ndarray:
        return self.u / self.u.sum()


def sa_learn_tabular(
    mdp: TabularMDP,
    prior,
    beta: float,
    alpha: float,
    alpha_theta: float,
    num_steps: int,
    rng: np.random.Generator,
    state: SaState | None = None,
    start_state: int = 0,
    renorm_interval: int = 1000,
) -> SaState:
    """Learn ``u`` and ``theta`` from a single trajectory of the prior.

    Along the rollout ``(s, a, r, s', a')`` with ``a' ~ pi0(.|s')``::

        u(s,a)     <- (1 - alpha) u(s,a) + alpha exp(beta (r - theta)) u(s',a')
        exp(b th)  <- (1 - alpha_theta) exp(b th) + alpha_theta exp(beta r) u(s',a') / u(s,a)

    ``u`` is rescaled to unit L1 norm every ``renorm_interval`` updates; both
    updates are invariant to that rescaling. Pass a previous ``state`` to
    continue learning.
    """
    pi0 = check_policy(prior, mdp.next_state.shape, full_support=True)
    if state is None:
        state = SaState(np.ones(mdp.num_pairs) / mdp.num_pairs, 0.0, alpha, alpha_theta, beta)
    n_a = mdp.num_actions
    u = [float(x) for x in state.u.reshape(-1)]
    z = float(np.exp(beta * state.theta))
    exp_r = np.exp(beta * mdp.reward).reshape(-1).tolist()
    succ = mdp.next_state.reshape(-1).tolist()
    cdf = np.cumsum(pi0, axis=1)
    cdf[:, -1] = 1.0
    s = start_state
    chunk = 65_536
    draws = rng.random(chunk)
    k = 0
    a = int(np.searchsorted(cdf[s], draws[k], side="right"))
    k += 1
    cdf_rows = [row.tolist() for row in cdf]

    def sample(row):
        nonlocal k, draws
        if k == chunk:
            draws = rng.random(chunk)
            k = 0
        x = draws[k]
        k += 1
        for i, c in enumerate(row):
            if x < c:
                return i
        return len(row) - 1

    one_m_a = 1.0 - alpha
    one_m_at = 1.0 - alpha_theta
    for step in range(1, num_steps + 1):
        i = s * n_a + a
        s_next = succ[i]
        a_next = sample(cdf_rows[s_next])
        j = s_next * n_a + a_next
        g = exp_r[i] * u[j]
        ratio = g / u[i]
        u[i] = one_m_a * u[i] + alpha * g / z
        z = one_m_at * z + alpha_theta * ratio
        if not (z > 0 and z < np.inf):
            raise RuntimeError(f"theta diverged after {state.steps + step} updates (exp(beta*theta)={z})")
        if step % renorm_interval == 0:
            total = sum(u)
            if not (total > 0 and total < np.inf):
                raise RuntimeError(f"u left the positive orthant after {state.steps + step} updates")
            u = [x / total for x in u]
            state.renormalizations += 1
        s, a = s_next, a_next
    arr = np.array(u)
    arr /= arr.sum()
    state.u = arr.reshape(mdp.next_state.shape)
    state.theta = float(np.log(z) / beta)
    state.steps += num_steps
    return state
