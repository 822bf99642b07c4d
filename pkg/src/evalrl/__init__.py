"""Entropy-regularized average-reward reinforcement learning.

Exact spectral solvers for tabular problems, the EVAL deep learner with
posterior policy iteration, discounted baselines and an experiment harness.
"""

__version__ = "0.1.0"

from .agent import EvalAgent, EvalAgentConfig, td_target, theta_batch_estimate
from .baselines import DqnAgent, DqnConfig, SqlAgent, SqlConfig, soft_value_iteration
from .config import ConfigError, ExperimentConfig, parse_config, parse_config_text
from .envs import make_env
from .mdp import TabularMDP, evaluate_policy, max_mean_cycle, parse_mdp
from .ppi import PpiAgent, PpiConfig, ppi_solve_exact
from .spectral import SpectralSolution, build_tilted_matrix, sa_learn_tabular, solve_erar

__all__ = [
    "__version__",
    "EvalAgent",
    "EvalAgentConfig",
    "td_target",
    "theta_batch_estimate",
    "DqnAgent",
    "DqnConfig",
    "SqlAgent",
    "SqlConfig",
    "soft_value_iteration",
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "parse_config_text",
    "make_env",
    "TabularMDP",
    "evaluate_policy",
    "max_mean_cycle",
    "parse_mdp",
    "PpiAgent",
    "PpiConfig",
    "ppi_solve_exact",
    "SpectralSolution",
    "build_tilted_matrix",
    "sa_learn_tabular",
    "solve_erar",
]
