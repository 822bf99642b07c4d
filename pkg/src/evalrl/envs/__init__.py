from .base import Env, EnvSpec, StepResult
from .classic import Acrobot, CartPole, MountainCar
from .gridworld import (
    GridWorld,
    GridWorldSpec,
    format_gridworld,
    load_gridworld,
    parse_gridworld,
    tabularize,
)

ENVIRONMENTS = {
    "CartPole-v1": CartPole,
    "Acrobot-v1": Acrobot,
    "MountainCar-v0": MountainCar,
}


def make_env(name: str, seed: int | None = None, grid: GridWorldSpec | None = None,
             max_episode_steps: int | None = None) -> Env:
    """Build an environment by name; ``GridWorld`` needs a ``grid`` spec."""
    kwargs = {} if max_episode_steps is None else {"max_episode_steps": max_episode_steps}
    if name == "GridWorld":
        if grid is None:
            raise ValueError("GridWorld requires a GridWorldSpec")
        return GridWorld(grid, seed=seed, **kwargs)
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS) + ['GridWorld']}") from None
    return cls(seed=seed, **kwargs)


__all__ = [
    "Env", "EnvSpec", "StepResult", "CartPole", "Acrobot", "MountainCar", "GridWorld",
    "GridWorldSpec", "parse_gridworld", "load_gridworld", "format_gridworld", "tabularize",
    "make_env", "ENVIRONMENTS",
]
