"""Replay storage and the environment loop shared by every deep agent."""

from __future__ import annotations

from typing import Any, Callable, NamedTuple, Protocol

import numpy as np

from .envs.base import Env, StepResult

__all__ = ["Transition", "Batch", "ReplayBuffer", "StopTraining", "Learner", "run_loop"]


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminated: bool


class Batch(NamedTuple):
    states: np.ndarray  # (B, obs_dim)
    actions: np.ndarray  # (B,) int
    rewards: np.ndarray  # (B,)
    next_states: np.ndarray  # (B, obs_dim)
    terminated: np.ndarray  # (B,) bool

    def __len__(self) -> int:
        return self.actions.shape[0]


class ReplayBuffer:
    """Ring buffer with uniform sampling (with replacement) over stored items.

    With ``nonpositive`` set, positive rewards are rejected (the EVAL agents
    expect shifted rewards); the discounted baselines store native rewards.
    """

    def __init__(self, capacity: int, obs_dim: int, num_actions: int | None = None,
                 nonpositive: bool = True):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.num_actions = num_actions
        self.nonpositive = nonpositive
        self.states = np.zeros((capacity, obs_dim))
        self.next_states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminated = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, action: int, reward: float, next_state, terminated: bool) -> None:
        if self.num_actions is not None and not 0 <= action < self.num_actions:
            raise ValueError(f"invalid action {action}")
        if self.nonpositive and reward > 0:
            raise ValueError(f"rewards must be shifted to be <= 0, got {reward}")
        i = self._pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminated[i] = terminated
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_transition(self, tr: Transition) -> None:
        self.add(tr.state, tr.action, tr.reward, tr.next_state, tr.terminated)

    def indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=batch_size)

    def gather(self, idx: np.ndarray) -> Batch:
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.terminated[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        return self.gather(self.indices(batch_size, rng))


class StopTraining(Exception):
    """Raised by an evaluation hook to end training early; may carry a final record."""

    def __init__(self, record=None):
        super().__init__(record)
        self.record = record


class Learner(Protocol):
    def act(self, observation: np.ndarray) -> int: ...

    def observe(self, state: np.ndarray, action: int, result: StepResult, step: int) -> None: ...


def run_loop(
    learner: Learner,
    env: Env,
    sample_budget: int,
    eval_hook: Callable[[int, Any], Any] | None = None,
) -> list:
    """Collect ``sample_budget`` environment steps, letting ``learner`` train after each.

    ``eval_hook(step, learner)`` runs after every step; non-``None`` results
    are collected and returned. The hook may raise :class:`StopTraining` to end the run.
    """
    records = []
    obs = env.reset()
    for t in range(1, sample_budget + 1):
        action = learner.act(obs)
        result = env.step(action)
        learner.observe(obs, action, result, t)
        if result.terminated or result.truncated:
            obs = env.reset()
            end = getattr(learner, "end_episode", None)
            if end is not None:
                end(t)
        else:
            obs = result.observation
        if eval_hook is not None:
            try:
                rec = eval_hook(t, learner)
            except StopTraining as stop:
                if stop.record is not None:
                    records.append(stop.record)
                break
            if rec is not None:
                records.append(rec)
    return records
