import math

import mpmath
import numpy as np
import pytest
from scipy.integrate import solve_ivp

from polisim.model import (
    EffectiveRates,
    SimState,
    effective_rates,
    equilibrium_prevalence,
    initial_infected,
    simulate,
    step,
)
from polisim.policy import EpiParameters, InterventionEffects, Policy, ScenarioDocument, policy_grid
from polisim.rng import SplitMix64

EPI = EpiParameters()
FX = InterventionEffects()

# 50-digit evaluation of the closed form: 20 * 0.3**2 * 0.5 * 0.5 * exp(-1) / (0.01 * 0.1) = 450/e
R0_DEFAULT = 165.54574852714904
# (r0 - 1) / (r0 + a c / g) at 50 digits
XSTAR_DEFAULT = 0.98503403994389185
# expectation-mode cases, default scenario, zero policy, 1095 days (mpmath recurrence below)
CASES_EXPECTATION_DEFAULT = 106696.81869571800629


def mp_recurrence(policy, days=1095, dps=30):
    """Independent high-precision replay of the expectation-mode recurrence."""
    mpmath.mp.dps = dps
    f = mpmath.mpf
    m, a, b, c, g, n, r = (f(str(v)) for v in (EPI.m, EPI.a, EPI.b, EPI.c, EPI.g, EPI.n_eip, EPI.r))
    a_eff = a * (1 - f(str(FX.kappa_bite)) * f(str(policy.itn_coverage)))
    g_eff = g * (1 + f(str(FX.kappa_kill_itn)) * f(str(policy.itn_coverage))
                 + f(str(FX.kappa_kill_irs)) * f(str(policy.irs_coverage)))
    r0 = m * a * a * b * c * mpmath.exp(-g * n) / (r * g)
    xs = (r0 - 1) / (r0 + a * c / g)
    pop = EPI.population
    inf = mpmath.floor(xs * pop + f("0.5"))
    cases = f(0)
    for _ in range(days):
        x = inf / pop
        acx = a_eff * c * x
        lam = b * m * a_eff * acx / (g_eff + acx) * mpmath.exp(-g_eff * n)
        new = (pop - inf) * (1 - mpmath.exp(-lam))
        inf = inf + new - inf * (1 - mpmath.exp(-r))
        cases += new
    return float(cases), float(inf / pop)


class TestEffectiveRates:
    def test_identity_at_zero(self):
        rates = effective_rates(EPI, FX, Policy(0, 0))
        assert rates.a_eff == EPI.a and rates.g_eff == EPI.g
        expected = EPI.m * EPI.a**2 * EPI.b * EPI.c * math.exp(-EPI.g * EPI.n_eip) / (EPI.r * EPI.g)
        assert rates.r0 == pytest.approx(expected, rel=1e-15)

    def test_full_biting_elimination(self):
        rates = effective_rates(EPI, InterventionEffects(kappa_bite=1.0), Policy(1, 0))
        assert rates.a_eff == 0.0 and rates.r0 == 0.0

    def test_default_r0(self):
        mpmath.mp.dps = 50
        assert float(450 / mpmath.e) == pytest.approx(R0_DEFAULT, rel=1e-15)
        assert effective_rates(EPI, FX, Policy(0, 0)).r0 == pytest.approx(R0_DEFAULT, rel=1e-9)

    @pytest.mark.parametrize("policy", policy_grid(0.25))
    def test_invariants(self, policy):
        rates = effective_rates(EPI, FX, policy)
        assert rates.a_eff <= EPI.a and rates.g_eff >= EPI.g and rates.r0 >= 0


class TestEquilibrium:
    def test_subcritical_is_zero(self):
        epi = EpiParameters(m=0.01)
        rates = effective_rates(epi, FX, Policy(0, 0))
        assert rates.r0 <= 1
        assert equilibrium_prevalence(rates, epi) == 0.0

    def test_exactly_critical_is_zero(self):
        assert equilibrium_prevalence(EffectiveRates(0.3, 0.1, 1.0), EPI) == 0.0

    def test_asymptote(self):
        assert equilibrium_prevalence(EffectiveRates(0.3, 0.1, 1e12), EPI) == pytest.approx(1.0, abs=1e-6)

    def test_default_value(self):
        x = equilibrium_prevalence(effective_rates(EPI, FX, Policy(0, 0)), EPI)
        assert x == pytest.approx(XSTAR_DEFAULT, rel=1e-12)
        assert initial_infected(EPI, FX) == 9850

    def test_ode_oracle(self):
        # continuous-time dynamics integrated to steady state from a low start
        a, g, c = EPI.a, EPI.g, EPI.c

        def rhs(_, y):
            x = y[0]
            s = a * c * x / (g + a * c * x) * math.exp(-g * EPI.n_eip)
            return [EPI.b * EPI.m * a * s * (1 - x) - EPI.r * x]

        sol = solve_ivp(rhs, (0, 20 * 1095), [0.01], method="LSODA", rtol=1e-10, atol=1e-12)
        terminal = sol.y[0, -1]
        x = equilibrium_prevalence(effective_rates(EPI, FX, Policy(0, 0)), EPI)
        assert terminal == pytest.approx(x, abs=1e-3)

    def test_daily_map_fixed_point_offset(self):
        # The daily step converts rates to probabilities (1 - e^-rate), so the
        # expectation-mode map settles a little below the continuous equilibrium.
        x = equilibrium_prevalence(effective_rates(EPI, FX, Policy(0, 0)), EPI)
        doc = ScenarioDocument(Policy(0, 0), horizon_days=20 * 1095, mode="expectation")
        settled = simulate(doc).final_prevalence
        assert 0.004 < x - settled < 0.006


class TestStep:
    def test_disease_free_absorbing(self):
        rates = effective_rates(EPI, FX, Policy(0, 0))
        for mode in ("stochastic", "expectation"):
            s = step(SimState(4, 0, 17), rates, EPI, SplitMix64(1), mode)
            assert s == SimState(5, 0, 17)

    def test_no_susceptibles(self):
        rates = effective_rates(EPI, FX, Policy(0, 0))
        pop = EPI.population
        s = step(SimState(0, pop, 0), rates, EPI, mode="expectation")
        assert s.cumulative_cases == 0
        assert pop - s.infected == pytest.approx(pop * (1 - math.exp(-EPI.r)), rel=1e-12)

    def test_equilibrium_self_consistency(self):
        rates = effective_rates(EPI, FX, Policy(0, 0))
        i0 = initial_infected(EPI, FX)
        s = SimState(0, float(i0), 0.0)
        for _ in range(30):
            s = step(s, rates, EPI, mode="expectation")
            assert abs(s.infected - i0) <= 0.01 * i0

    def test_python_step_matches_kernel(self):
        doc = ScenarioDocument(Policy(0.3, 0.6), horizon_days=200, seed=42)
        rates = effective_rates(doc.epi, doc.effects, doc.policy)
        rng = SplitMix64(doc.seed)
        s = SimState(0, initial_infected(doc.epi, doc.effects), 0)
        for _ in range(doc.horizon_days):
            s = step(s, rates, doc.epi, rng, "stochastic")
            assert 0 <= s.infected <= doc.epi.population
        out = simulate(doc)
        assert out.total_cases == s.cumulative_cases
        assert out.final_prevalence == s.infected / doc.epi.population

    def test_python_step_matches_kernel_expectation(self):
        doc = ScenarioDocument(Policy(0.7, 0.2), horizon_days=100, mode="expectation")
        rates = effective_rates(doc.epi, doc.effects, doc.policy)
        s = SimState(0, float(initial_infected(doc.epi, doc.effects)), 0.0)
        for _ in range(doc.horizon_days):
            s = step(s, rates, doc.epi, mode="expectation")
        assert simulate(doc).total_cases == pytest.approx(s.cumulative_cases, rel=1e-13)


class TestSimulate:
    def test_empty_horizon(self):
        for mode in ("stochastic", "expectation"):
            assert simulate(ScenarioDocument(Policy(0.5, 0.5), horizon_days=0, mode=mode)).total_cases == 0

    def test_seeded_determinism(self):
        doc = ScenarioDocument(Policy(0.4, 0.1), seed=123)
        assert simulate(doc) == simulate(doc)

    def test_expectation_pinned(self):
        out = simulate(ScenarioDocument(Policy(0, 0), mode="expectation"))
        assert out.total_cases == pytest.approx(CASES_EXPECTATION_DEFAULT, rel=1e-6)

    @pytest.mark.parametrize("policy", [Policy(0, 0), Policy(0.5, 0.5), Policy(1, 0.3)])
    def test_expectation_matches_mpmath(self, policy):
        cases, prev = mp_recurrence(policy)
        out = simulate(ScenarioDocument(policy, mode="expectation"))
        assert out.total_cases == pytest.approx(cases, rel=1e-9)
        assert out.final_prevalence == pytest.approx(prev, rel=1e-9)

    def test_mpmath_pin_agrees(self):
        assert mp_recurrence(Policy(0, 0))[0] == pytest.approx(CASES_EXPECTATION_DEFAULT, rel=1e-12)

    def test_different_seeds_differ(self):
        counts = [simulate(ScenarioDocument(Policy(0, 0), seed=s)).total_cases for s in range(100)]
        same = sum(a == b for a, b in zip(counts, counts[1:]))
        assert same <= 1

    @pytest.mark.parametrize("policy", [Policy(0, 0), Policy(1, 1), Policy(0.2, 0.9)])
    def test_bounds(self, policy):
        for mode in ("stochastic", "expectation"):
            doc = ScenarioDocument(policy, seed=9, mode=mode)
            out = simulate(doc)
            assert 0 <= out.final_prevalence <= 1
            assert 0 <= out.total_cases <= doc.epi.population * doc.horizon_days

    def test_monotone_in_coverage(self):
        levels = [i / 10 for i in range(11)]
        cases = np.array([[simulate(ScenarioDocument(Policy(i, j), mode="expectation")).total_cases
                           for j in levels] for i in levels])
        assert (np.diff(cases, axis=0) <= 0).all()
        assert (np.diff(cases, axis=1) <= 0).all()

    def test_stochastic_mean_tracks_expectation(self):
        runs = np.array([simulate(ScenarioDocument(Policy(0, 0), seed=s)).total_cases for s in range(200)])
        expected = simulate(ScenarioDocument(Policy(0, 0), mode="expectation")).total_cases
        se = runs.std(ddof=1) / math.sqrt(len(runs))
        assert abs(runs.mean() - expected) < 5 * se

    def test_subcritical_start_stays_clear(self):
        epi = EpiParameters(m=0.01)
        doc = ScenarioDocument(Policy(0, 0), epi=epi, seed=1)
        assert simulate(doc).total_cases == 0
