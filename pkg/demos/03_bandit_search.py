"""
Bandit agents on the noisy policy grid
======================================

Each pull runs one fresh stochastic replicate.  Regret is measured against
the expectation-mode surface and compared with picking arms at random.
"""

import numpy as np

from polisim import (
    BanditConfig,
    LocalEvaluator,
    SeedTemplate,
    oracle_argmax,
    oracle_surface,
    policy_grid,
    random_baseline_regret,
    run_bandit,
)

grid = policy_grid(0.1)
surface = oracle_surface(SeedTemplate(), grid)
oracle = [r for _, r in surface]
print("oracle best:", grid[oracle_argmax(surface)])

budget = 1000
memo = {}  # simulations shared between the agents below
for strategy in ["epsilon_greedy", "ucb1", "thompson"]:
    ev = LocalEvaluator(SeedTemplate(base_seed=7), fresh_replicates=True, memo=memo)
    report = run_bandit(BanditConfig(strategy, budget=budget, rng_seed=1), ev, grid, oracle)
    counts = np.array([a.count for a in report.arms])
    print(f"{strategy:15s} best {report.best_policy}  regret {report.total_regret:10.0f}  "
          f"pulls on best arm {counts[oracle_argmax(surface)]}")

uniform = random_baseline_regret(oracle, budget, rng_seed=1)
print(f"{'uniform':15s} regret {uniform[-1]:10.0f}")
