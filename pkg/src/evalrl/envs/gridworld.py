"""Deterministic gridworld with a goal that teleports back to the start.

Cells are indexed ``y * width + x`` with ``y = 0`` the top row. Moving into a
wall leaves the agent in place. Every move costs ``step_reward``; any action
taken on the goal cell returns the agent to the start at zero cost, which keeps
every policy's chain irreducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..mdp import TabularMDP, uniform_policy
from .base import Env, EnvSpec

UP, RIGHT, DOWN, LEFT = range(4)
MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


@dataclass(frozen=True)
class GridWorldSpec:
    width: int
    height: int
    start: tuple[int, int]
    goal: tuple[int, int]
    step_reward: float = -1.0
    goal_behavior: str = "reset"

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.width * self.height < 2:
            raise ValueError("grid needs at least two cells")
        for name, (x, y) in (("start", self.start), ("goal", self.goal)):
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"{name} cell {(x, y)} outside the grid")
        if tuple(self.start) == tuple(self.goal):
            raise ValueError("start and goal must differ")
        if self.step_reward > 0:
            raise ValueError("step_reward must be <= 0")
        if self.goal_behavior not in ("reset", "absorb"):
            raise ValueError("goal_behavior must be 'reset' or 'absorb'")

    @property
    def num_cells(self) -> int:
        return self.width * self.height

    def cell(self, x: int, y: int) -> int:
        return y * self.width + x

    def coords(self, cell: int) -> tuple[int, int]:
        return cell % self.width, cell // self.width


def parse_gridworld(text: str) -> GridWorldSpec:
    """Parse ``width height start_x start_y goal_x goal_y step_reward``."""
    tok = text.split("#", 1)[0].split()
    if len(tok) != 7:
        raise ValueError("expected 'width height start_x start_y goal_x goal_y step_reward'")
    w, h, sx, sy, gx, gy = (int(t) for t in tok[:6])
    return GridWorldSpec(w, h, (sx, sy), (gx, gy), float(tok[6]))


def load_gridworld(path) -> GridWorldSpec:
    return parse_gridworld(Path(path).read_text())


def format_gridworld(spec: GridWorldSpec) -> str:
    return (f"{spec.width} {spec.height} {spec.start[0]} {spec.start[1]} "
            f"{spec.goal[0]} {spec.goal[1]} {spec.step_reward!r}\n")


def _transition(spec: GridWorldSpec, cell: int, action: int) -> tuple[int, float]:
    goal = spec.cell(*spec.goal)
    if cell == goal:
        if spec.goal_behavior == "reset":
            return spec.cell(*spec.start), 0.0
        return goal, 0.0
    x, y = spec.coords(cell)
    dx, dy = MOVES[action]
    nx = min(max(x + dx, 0), spec.width - 1)
    ny = min(max(y + dy, 0), spec.height - 1)
    return spec.cell(nx, ny), spec.step_reward


def tabularize(spec: GridWorldSpec) -> tuple[TabularMDP, np.ndarray]:
    """Tabular MDP (4 actions, wall clamping, goal resets to start) and its uniform prior."""
    if spec.goal_behavior != "reset":
        raise ValueError("an absorbing goal makes every policy's chain reducible")
    n = spec.num_cells
    nxt = np.zeros((n, 4), dtype=np.int64)
    rew = np.zeros((n, 4))
    for cell in range(n):
        for a in range(4):
            nxt[cell, a], rew[cell, a] = _transition(spec, cell, a)
    # every cell must reach the goal and be reachable from the start
    seen = {spec.cell(*spec.start)}
    frontier = list(seen)
    while frontier:
        c = frontier.pop()
        for s_next in nxt[c]:
            if int(s_next) not in seen:
                seen.add(int(s_next))
                frontier.append(int(s_next))
    if len(seen) != n:
        raise ValueError(f"cells unreachable from the start: {sorted(set(range(n)) - seen)}")
    return TabularMDP(nxt, rew), uniform_policy(n, 4)


class GridWorld(Env):
    """Continuing gridworld with one-hot cell observations."""

    def __init__(self, spec: GridWorldSpec, seed: int | None = None, max_episode_steps: int = 100):
        super().__init__(EnvSpec("GridWorld", spec.num_cells, 4, max_episode_steps), seed)
        self.grid = spec
        self.cell = spec.cell(*spec.start)
        self._eye = np.eye(spec.num_cells)

    def _reset(self, rng):
        self.cell = self.grid.cell(*self.grid.start)
        return self._eye[self.cell].copy()

    def _step(self, action):
        self.cell, reward = _transition(self.grid, self.cell, action)
        return self._eye[self.cell].copy(), reward, False
