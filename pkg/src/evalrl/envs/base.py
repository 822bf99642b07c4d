from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float  # shifted so that every reward is <= 0
    terminated: bool
    truncated: bool


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment.

    ``reward_offset`` is the constant removed from native rewards, so native
    returns are recovered as ``sum(reward) + steps * reward_offset``.
    ``terminal_value`` is the value of ``u`` (``exp(beta Q)``) after
    termination: 1 when termination is a goal (zero-cost absorbing state),
    0 when it is a failure that forfeits all future reward.
    """

    name: str
    obs_dim: int
    num_actions: int
    max_episode_steps: int
    reward_offset: float = 0.0
    terminal_value: float = 1.0

    def __post_init__(self):
        if self.num_actions < 2:
            raise ValueError("an environment needs at least two actions")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")


class Env:
    """Stepping interface with time-limit truncation and reward shifting.

    Subclasses implement ``_reset(rng)`` and ``_step(action)`` returning
    ``(observation, native_reward, terminated)``.
    """

    spec: EnvSpec

    def __init__(self, spec: EnvSpec, seed: int | None = None):
        self.spec = spec
        self._rng = np.random.default_rng(seed)
        self._elapsed = 0
        self._done = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._elapsed = 0
        self._done = False
        return self._reset(self._rng)

    def step(self, action: int) -> StepResult:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        if not 0 <= action < self.spec.num_actions:
            raise ValueError(f"invalid action {action}")
        obs, reward, terminated = self._step(int(action))
        self._elapsed += 1
        truncated = not terminated and self._elapsed >= self.spec.max_episode_steps
        self._done = terminated or truncated
        return StepResult(obs, reward - self.spec.reward_offset, terminated, truncated)

    def set_time_limit(self, limit: int) -> "Env":
        if limit < 1:
            raise ValueError("time limit must be >= 1")
        self.spec = replace(self.spec, max_episode_steps=int(limit))
        return self

    @property
    def elapsed_steps(self) -> int:
        return self._elapsed

    def _reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _step(self, action: int):
        raise NotImplementedError
