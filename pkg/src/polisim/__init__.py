"""Desk-scale malaria policy evaluation: a work queue of surrogate simulations,
a content-addressed result store, and bandit agents over ITN x IRS coverage."""

from .bandit import (
    BanditConfig,
    BanditReport,
    oracle_argmax,
    oracle_surface,
    random_baseline_regret,
    reward_from,
    run_bandit,
)
from .clerk import Clerk, LocalEvaluator, SeedTemplate, germinate
from .economics import EconSummary, cost_effectiveness, dalys, policy_cost
from .model import effective_rates, equilibrium_prevalence, simulate
from .policy import (
    INEFFECTIVE,
    EpiParameters,
    EvaluationResult,
    InterventionEffects,
    Policy,
    ScenarioDocument,
    canonical_hash,
    canonical_json,
    make_policy,
    policy_grid,
)
from .store import Datastore

__version__ = "0.1.0"

__all__ = [
    "INEFFECTIVE",
    "BanditConfig",
    "BanditReport",
    "Clerk",
    "Datastore",
    "EconSummary",
    "EpiParameters",
    "EvaluationResult",
    "InterventionEffects",
    "LocalEvaluator",
    "Policy",
    "ScenarioDocument",
    "SeedTemplate",
    "canonical_hash",
    "canonical_json",
    "cost_effectiveness",
    "dalys",
    "effective_rates",
    "equilibrium_prevalence",
    "germinate",
    "make_policy",
    "oracle_argmax",
    "oracle_surface",
    "policy_cost",
    "policy_grid",
    "random_baseline_regret",
    "reward_from",
    "run_bandit",
    "simulate",
]
