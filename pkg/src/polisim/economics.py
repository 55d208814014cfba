"""DALYs, intervention cost, and cost per DALY averted.

No discounting and no age weighting.  The referent for "averted" is the
zero-coverage policy run with the same parameters, horizon, mode and seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from .policy import INEFFECTIVE, EpiParameters, InterventionEffects, Policy, cpd_from_json, cpd_to_json

__all__ = ["EconSummary", "aggregate", "cost_effectiveness", "dalys", "policy_cost"]


@dataclass(frozen=True)
class EconSummary:
    dalys: float
    cost: float
    dalys_averted: float
    cost_per_daly_averted: Any  # float > 0 or INEFFECTIVE

    @property
    def effective(self) -> bool:
        return self.cost_per_daly_averted is not INEFFECTIVE

    def to_json(self) -> dict:
        return {
            "dalys": float(self.dalys),
            "cost": float(self.cost),
            "dalys_averted": float(self.dalys_averted),
            "cost_per_daly_averted": cpd_to_json(self.cost_per_daly_averted),
        }

    @classmethod
    def from_json(cls, data) -> EconSummary:
        return cls(float(data["dalys"]), float(data["cost"]), float(data["dalys_averted"]),
                   cpd_from_json(data["cost_per_daly_averted"]))


def dalys(total_cases: float, epi: EpiParameters) -> float:
    """Disability plus years-of-life-lost burden of ``total_cases`` episodes."""
    yld = total_cases * epi.disability_weight * (epi.episode_duration_days / 365.0)
    yll = total_cases * epi.cfr * epi.yll_per_death
    return yld + yll


def deaths(total_cases: float, epi: EpiParameters) -> float:
    # expected deaths; sampling them would only add reward noise
    return total_cases * epi.cfr


def policy_cost(policy: Policy, epi: EpiParameters, effects: InterventionEffects, horizon_days: int) -> float:
    years = horizon_days / 365.0
    per_person_year = (policy.itn_coverage * effects.unit_cost_itn
                       + policy.irs_coverage * effects.unit_cost_irs)
    return epi.population * years * per_person_year


def cost_effectiveness(policy_result: tuple[float, float], baseline_cases: float,
                       epi: EpiParameters) -> EconSummary:
    """Price a ``(cases, cost)`` outcome against the baseline case count."""
    cases, cost = policy_result
    burden = dalys(cases, epi)
    averted = dalys(baseline_cases, epi) - burden
    if averted > 0:
        cpd = cost / averted
    else:
        cpd = INEFFECTIVE
    return EconSummary(burden, cost, averted, cpd)


def aggregate(summaries: Sequence[EconSummary]) -> EconSummary:
    """Mean over replicates.

    Ineffective replicates are left out of the cost-per-DALY mean; the
    aggregate is ineffective only if every replicate is.
    """
    if not summaries:
        raise ValueError("nothing to aggregate")
    n = len(summaries)
    effective = [s.cost_per_daly_averted for s in summaries if s.effective]
    cpd = sum(effective) / len(effective) if effective else INEFFECTIVE
    return EconSummary(
        sum(s.dalys for s in summaries) / n,
        sum(s.cost for s in summaries) / n,
        sum(s.dalys_averted for s in summaries) / n,
        cpd,
    )
