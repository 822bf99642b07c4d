"""Exact solution of the default gridworld and a look at the temperature.

Run: python demos/solve_gridworld.py
"""

import numpy as np

from evalrl.config import DEFAULT_GRID
from evalrl.envs import parse_gridworld, tabularize
from evalrl.mdp import entropy_reg_rate, evaluate_policy
from evalrl.spectral import solve_erar

spec = parse_gridworld(DEFAULT_GRID)
mdp, prior = tabularize(spec)
print(f"gridworld {spec.width}x{spec.height}, goal at {spec.goal}, step reward {spec.step_reward}")

# higher beta trades entropy for reward; theta is the regularized rate
print("\n  beta    theta   reward rate  gamma_gap")
for beta in (0.5, 1.0, 2.0, 5.0, 15.0):
    sol = solve_erar(mdp, prior, beta)
    rho = evaluate_policy(mdp, sol.policy).rho
    print(f"{beta:6.1f} {sol.theta:8.4f} {rho:12.4f} {sol.gap_discount:10.4f}")

# no other policy does better on the regularized objective
beta = 2.0
sol = solve_erar(mdp, prior, beta)
rng = np.random.default_rng(0)
best_random = max(entropy_reg_rate(mdp, rng.dirichlet(np.ones(4), size=16), prior, beta) for _ in range(200))
print(f"\nbeta {beta}: theta {sol.theta:.4f}, best of 200 random policies {best_random:.4f}")

arrows = np.array(list("^>v<"))  # UP, RIGHT, DOWN, LEFT
cells = arrows[sol.policy.argmax(axis=1)]
cells[spec.cell(*spec.goal)] = "G"
print("\ngreedy actions (row 0 at the top):")
for row in cells.reshape(spec.height, spec.width):
    print("  " + " ".join(row))
