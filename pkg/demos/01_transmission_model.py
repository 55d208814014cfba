"""
The transmission model
======================

Reproduction number, endemic equilibrium, and how the stochastic and
expectation-mode simulators relate.
"""

import numpy as np

from polisim import EpiParameters, InterventionEffects, Policy, ScenarioDocument, simulate
from polisim.model import effective_rates, equilibrium_prevalence, initial_infected

epi, fx = EpiParameters(), InterventionEffects()

# Untreated transmission is intense: r0 is in the hundreds and most people are infected.
rates = effective_rates(epi, fx, Policy(0, 0))
print(f"r0 = {rates.r0:.2f}, equilibrium prevalence = {equilibrium_prevalence(rates, epi):.4f}")
print("initial infected:", initial_infected(epi, fx))

# Bednets cut biting and raise vector mortality; spraying only raises mortality.
for policy in [Policy(0.5, 0), Policy(0, 0.5), Policy(1, 0), Policy(1, 1)]:
    r = effective_rates(epi, fx, policy)
    print(f"{policy.itn_coverage:.1f}/{policy.irs_coverage:.1f}: r0 = {r.r0:8.3f}")

# A three-year run in expectation mode is deterministic ...
doc = ScenarioDocument(Policy(0.5, 0.5), mode="expectation")
expected = simulate(doc).total_cases
print(f"expected cases over {doc.horizon_days} days: {expected:.1f}")

# ... and the mean of seeded stochastic runs tracks it.
runs = np.array([simulate(ScenarioDocument(Policy(0.5, 0.5), seed=s)).total_cases for s in range(200)])
se = runs.std(ddof=1) / np.sqrt(runs.size)
print(f"stochastic mean {runs.mean():.1f} +/- {se:.1f} (SE), z = {(runs.mean() - expected) / se:.2f}")

# Same document, same numbers: the seed is part of the content.
assert simulate(ScenarioDocument(Policy(0.5, 0.5), seed=3)) == simulate(ScenarioDocument(Policy(0.5, 0.5), seed=3))
