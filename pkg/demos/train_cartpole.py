"""Train EVAL on CartPole with the tuned preset and print the learning curve.

Uses the experiment harness, so the run directory holds the same CSVs and
checkpoints the CLI writes. Three seeds with a 20k-step budget take a few
minutes on one core.

Run: python demos/train_cartpole.py [output_dir]
"""

import sys

from evalrl.config import parse_config_text
from evalrl.harness import read_csv, run_experiment

out = sys.argv[1] if len(sys.argv) > 1 else "runs/demo_cartpole"
cfg = parse_config_text("""
[experiment]
algorithm = eval
environment = CartPole-v1
budget = 20000
seeds = 3
eval_interval = 2000
eval_episodes = 5
""")
res = run_experiment(cfg, out)
print(f"wrote {res.directory}")
print("\n  step  mean return  std across seeds")
for row in read_csv(res.directory / "aggregate.csv"):
    print(f"{int(row['step']):6d} {float(row['return_mean']):12.1f} {float(row['return_std']):16.1f}")
