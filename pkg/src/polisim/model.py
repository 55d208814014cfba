"""Surrogate malaria transmission model.

A one-variable Ross-Macdonald style model: human prevalence ``x`` is the
only state, and the mosquito sporozoite rate is treated as in quasi
equilibrium with the current prevalence,

    s = a c x / (g + a c x) * exp(-g n)
    EIR = m a s,   lambda = b EIR.

Each day susceptibles are infected with probability ``1 - exp(-lambda)`` and
infected humans recover with probability ``1 - exp(-r)``.  In stochastic mode
both transitions are binomial draws (inverse CDF over a SplitMix64 stream,
see :mod:`polisim.rng`, two uniforms consumed per day); in expectation mode
the draws are replaced by their means and the state is real valued.

Bednets cut biting and raise mosquito mortality, spraying raises mortality:

    a_eff = a (1 - kappa_bite itn)
    g_eff = g (1 + kappa_kill_itn itn + kappa_kill_irs irs)

A simulation starts at the endemic equilibrium of the *untreated* setting and
applies the policy from day 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .policy import (
    ZERO_POLICY,
    EpiParameters,
    InterventionEffects,
    Mode,
    Policy,
    ScenarioDocument,
)
from .rng import SplitMix64, _next_uniform, binomial_icdf

__all__ = [
    "EffectiveRates",
    "SimOutputs",
    "SimState",
    "effective_rates",
    "equilibrium_prevalence",
    "initial_infected",
    "simulate",
    "step",
]


@dataclass(frozen=True)
class EffectiveRates:
    a_eff: float
    g_eff: float
    r0: float


@dataclass(frozen=True)
class SimState:
    day: int = 0
    infected: float = 0  # int in stochastic mode
    cumulative_cases: float = 0


@dataclass(frozen=True)
class SimOutputs:
    total_cases: float
    final_prevalence: float


def effective_rates(epi: EpiParameters, effects: InterventionEffects, policy: Policy) -> EffectiveRates:
    a_eff = epi.a * (1.0 - effects.kappa_bite * policy.itn_coverage)
    g_eff = epi.g * (1.0 + effects.kappa_kill_itn * policy.itn_coverage
                     + effects.kappa_kill_irs * policy.irs_coverage)
    r0 = epi.m * a_eff * a_eff * epi.b * epi.c * math.exp(-g_eff * epi.n_eip) / (epi.r * g_eff)
    return EffectiveRates(a_eff, g_eff, r0)


def equilibrium_prevalence(rates: EffectiveRates, epi: EpiParameters) -> float:
    """Endemic equilibrium of the continuous-time dynamics, 0 if ``r0 <= 1``."""
    if rates.r0 <= 1.0:
        return 0.0
    return max(0.0, (rates.r0 - 1.0) / (rates.r0 + rates.a_eff * epi.c / rates.g_eff))


def initial_infected(epi: EpiParameters, effects: InterventionEffects) -> int:
    x0 = equilibrium_prevalence(effective_rates(epi, effects, ZERO_POLICY), epi)
    # round half up; avoids banker's rounding differences across runtimes
    return int(math.floor(x0 * epi.population + 0.5))


def _force_of_infection(x, a_eff, g_eff, m, b, c, n_eip):
    if x <= 0.0:
        return 0.0
    acx = a_eff * c * x
    s = acx / (g_eff + acx) * math.exp(-g_eff * n_eip)
    return b * m * a_eff * s


_foi = numba.njit(cache=True)(_force_of_infection)


def step(state: SimState, rates: EffectiveRates, epi: EpiParameters,
         rng: SplitMix64 | None = None, mode: str = Mode.STOCHASTIC) -> SimState:
    """Advance one day.  ``rng`` is required in stochastic mode."""
    pop = epi.population
    lam = _force_of_infection(state.infected / pop, rates.a_eff, rates.g_eff,
                              epi.m, epi.b, epi.c, epi.n_eip)
    p_inf = -math.expm1(-lam)
    p_rec = -math.expm1(-epi.r)
    if mode == Mode.STOCHASTIC:
        u_inf = rng.uniform()
        u_rec = rng.uniform()
        new = int(binomial_icdf(int(pop - state.infected), p_inf, u_inf))
        rec = int(binomial_icdf(int(state.infected), p_rec, u_rec))
    elif mode == Mode.EXPECTATION:
        new = (pop - state.infected) * p_inf
        rec = state.infected * p_rec
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return SimState(state.day + 1, state.infected + new - rec, state.cumulative_cases + new)


@numba.njit(cache=True)
def _run_stochastic(infected, pop, days, a_eff, g_eff, m, b, c, n_eip, r, seed):
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    p_rec = -math.expm1(-r)
    cases = 0
    for _ in range(days):
        lam = _foi(infected / pop, a_eff, g_eff, m, b, c, n_eip)
        p_inf = -math.expm1(-lam)
        u_inf = _next_uniform(state)
        u_rec = _next_uniform(state)
        new = binomial_icdf(pop - infected, p_inf, u_inf)
        rec = binomial_icdf(infected, p_rec, u_rec)
        infected += new - rec
        cases += new
    return cases, infected


@numba.njit(cache=True)
def _run_expectation(infected, pop, days, a_eff, g_eff, m, b, c, n_eip, r):
    p_rec = -math.expm1(-r)
    cases = 0.0
    for _ in range(days):
        lam = _foi(infected / pop, a_eff, g_eff, m, b, c, n_eip)
        new = (pop - infected) * -math.expm1(-lam)
        infected += new - infected * p_rec
        cases += new
    return cases, infected


def simulate(doc: ScenarioDocument) -> SimOutputs:
    """Run one scenario; identical documents give bit-identical outputs."""
    epi = doc.epi
    rates = effective_rates(epi, doc.effects, doc.policy)
    i0 = initial_infected(epi, doc.effects)
    args = (epi.population, doc.horizon_days, rates.a_eff, rates.g_eff,
            epi.m, epi.b, epi.c, epi.n_eip, epi.r)
    if doc.mode == Mode.STOCHASTIC:
        cases, infected = _run_stochastic(np.int64(i0), *args, np.uint64(doc.seed))
        return SimOutputs(int(cases), int(infected) / epi.population)
    cases, infected = _run_expectation(float(i0), *args)
    return SimOutputs(float(cases), float(infected) / epi.population)
