"""
Cost per DALY averted over the policy grid
==========================================

The expectation-mode surface is what the bandit agents are scored against.
"""

import numpy as np

from polisim import INEFFECTIVE, SeedTemplate, policy_grid
from polisim.clerk import LocalEvaluator

levels = np.round(np.linspace(0, 1, 11), 1)
evaluate = LocalEvaluator(SeedTemplate(mode="expectation"))

surface = np.full((11, 11), np.nan)
for p in policy_grid(0.1):
    cpd = evaluate(p).cost_per_daly_averted
    if cpd is not INEFFECTIVE:
        surface[round(p.itn_coverage * 10), round(p.irs_coverage * 10)] = cpd

# rows: ITN coverage, columns: IRS coverage
np.set_printoptions(linewidth=140, precision=0, suppress=True)
print("cost per DALY averted (nan = no DALYs averted)")
print("      " + " ".join(f"{x:6.1f}" for x in levels))
for i, row in enumerate(surface):
    print(f"{levels[i]:4.1f}  " + " ".join(f"{v:6.0f}" for v in row))

i, j = np.unravel_index(np.nanargmin(surface), surface.shape)
print(f"cheapest policy: ITN {levels[i]}, IRS {levels[j]} at {surface[i, j]:.2f} per DALY averted")
