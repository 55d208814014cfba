"""Bandit agents searching the policy grid for the lowest cost per DALY averted.

Each grid policy is an arm; a pull evaluates it once.  Rewards are negated,
capped costs per DALY averted (``reward_from``), so the best arm has the
largest reward.  Three strategies are provided:

* ``epsilon_greedy``: explore uniformly with probability ``epsilon0 / sqrt(t)``,
  otherwise play the best empirical mean (unpulled arms count as ``+inf``).
* ``ucb1``: play each arm once, then ``argmax mean + c sqrt(2 ln t / n)``.
* ``thompson``: Gaussian posterior sampling with a normal prior of known
  variance.

Ties always go to the lowest arm index.  Regret is measured against the
expectation-mode surface from :func:`oracle_surface`.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .clerk import ClerkTimeout, LocalEvaluator, SeedTemplate, TaskFailed
from .economics import EconSummary
from .fabric import BrokerUnavailable
from .policy import INEFFECTIVE, Mode, Policy, cpd_to_json

__all__ = [
    "ArmState",
    "BanditConfig",
    "BanditReport",
    "make_arms",
    "oracle_argmax",
    "oracle_surface",
    "random_baseline_regret",
    "reward_from",
    "run_bandit",
    "select_epsilon_greedy",
    "select_thompson",
    "select_ucb1",
]

log = logging.getLogger(__name__)

STRATEGIES = ("epsilon_greedy", "ucb1", "thompson")
ALIASES = {"eps": "epsilon_greedy", "ucb": "ucb1", "ts": "thompson"}
DEFAULT_REWARD_CAP = 10_000.0

Evaluator = Callable[[Policy], EconSummary]


@dataclass
class ArmState:
    arm_index: int
    policy: Policy
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, reward: float) -> None:
        # Welford
        self.count += 1
        delta = reward - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (reward - self.mean)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count >= 2 else math.nan

    def to_json(self) -> dict:
        return {
            "arm_index": self.arm_index,
            "policy": self.policy.to_json(),
            "count": self.count,
            "mean": self.mean if self.count else None,
            "variance": self.variance if self.count >= 2 else None,
        }


def make_arms(grid: Sequence[Policy]) -> list[ArmState]:
    return [ArmState(i, p) for i, p in enumerate(grid)]


@dataclass(frozen=True)
class BanditConfig:
    """Agent settings.

    ``ucb_c`` and the Thompson prior are in reward units (currency per DALY),
    not the unit interval UCB1 is usually stated for.
    """

    strategy: str = "ucb1"
    budget: int = 1000
    epsilon0: float = 0.5
    ucb_c: float = 10.0
    prior_mean: float = 0.0
    prior_strength: float = 1.0
    prior_variance: float = 100.0
    rng_seed: int = 0
    reward_cap: float = DEFAULT_REWARD_CAP

    def __post_init__(self) -> None:
        strategy = ALIASES.get(self.strategy, self.strategy)
        if strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES} or {tuple(ALIASES)}")
        object.__setattr__(self, "strategy", strategy)
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.reward_cap <= 0:
            raise ValueError("reward_cap must be positive")
        if self.prior_variance < 0 or self.prior_strength < 0:
            raise ValueError("Thompson prior variance/strength must be non-negative")

    def to_json(self) -> dict:
        return dict(self.__dict__)


def reward_from(summary: EconSummary | object, cap: float = DEFAULT_REWARD_CAP) -> float:
    """``-min(cost per DALY averted, cap)``; ineffective policies earn ``-cap``."""
    cpd = summary.cost_per_daly_averted if isinstance(summary, EconSummary) else summary
    if cpd is INEFFECTIVE:
        return -cap
    return -min(float(cpd), cap)


# -- selection rules


def _argmax(values: np.ndarray) -> int:
    # np.argmax returns the first maximum: lowest index wins ties
    return int(np.argmax(values))


def select_epsilon_greedy(arms: Sequence[ArmState], t: int, config: BanditConfig,
                          rng: np.random.Generator) -> int:
    eps = config.epsilon0 / math.sqrt(t)
    if rng.random() < eps:
        return int(rng.integers(len(arms)))
    means = np.array([a.mean if a.count else math.inf for a in arms])
    return _argmax(means)


def select_ucb1(arms: Sequence[ArmState], t: int, config: BanditConfig) -> int:
    for a in arms:
        if a.count == 0:
            return a.arm_index
    log_t = math.log(t)
    index = np.array([a.mean + config.ucb_c * math.sqrt(2.0 * log_t / a.count) for a in arms])
    return _argmax(index)


def posterior(arms: Sequence[ArmState], config: BanditConfig) -> tuple[np.ndarray, np.ndarray]:
    counts = np.array([a.count for a in arms], dtype=float)
    means = np.array([a.mean for a in arms], dtype=float)
    weight = config.prior_strength + counts
    with np.errstate(invalid="ignore", divide="ignore"):
        post_mean = (config.prior_strength * config.prior_mean + counts * means) / weight
        post_var = config.prior_variance / weight
    # an improper (zero-strength) prior on an unpulled arm: treat as maximally optimistic
    post_mean = np.where(weight > 0, post_mean, math.inf)
    post_var = np.where(weight > 0, post_var, 0.0)
    return post_mean, post_var


def select_thompson(arms: Sequence[ArmState], config: BanditConfig, rng: np.random.Generator) -> int:
    post_mean, post_var = posterior(arms, config)
    theta = post_mean + np.sqrt(post_var) * rng.standard_normal(len(arms))
    return _argmax(theta)


# -- oracle


def oracle_surface(template: SeedTemplate | None = None, grid: Sequence[Policy] | None = None,
                   reward_cap: float = DEFAULT_REWARD_CAP) -> list[tuple[Policy, float]]:
    """Expected reward of every grid policy, from the deterministic simulator."""
    from .policy import policy_grid

    template = (template or SeedTemplate()).replace(mode=Mode.EXPECTATION, replicates=1)
    grid = policy_grid(0.1) if grid is None else grid
    evaluator = LocalEvaluator(template)
    return [(p, reward_from(evaluator(p), reward_cap)) for p in grid]


def oracle_argmax(surface: Sequence[tuple[Policy, float]]) -> int:
    return _argmax(np.array([r for _, r in surface]))


# -- runs


@dataclass
class Pull:
    t: int
    arm_index: int
    policy: Policy
    reward: float
    cost_per_daly_averted: object
    regret: float | None


@dataclass
class BanditReport:
    config: BanditConfig
    arms: list[ArmState]
    pulls: list[Pull] = field(default_factory=list)
    cumulative_regret: list[float] = field(default_factory=list)
    complete: bool = True
    error: str | None = None

    @property
    def best_arm(self) -> int | None:
        pulled = [a for a in self.arms if a.count]
        if not pulled:
            return None
        return max(pulled, key=lambda a: (a.mean, -a.arm_index)).arm_index

    @property
    def best_policy(self) -> Policy | None:
        idx = self.best_arm
        return None if idx is None else self.arms[idx].policy

    @property
    def total_regret(self) -> float | None:
        return self.cumulative_regret[-1] if self.cumulative_regret else None

    def to_json(self) -> dict:
        best = self.best_policy
        return {
            "config": self.config.to_json(),
            "complete": self.complete,
            "error": self.error,
            "pulls": len(self.pulls),
            "best_arm": self.best_arm,
            "best_policy": best.to_json() if best else None,
            "total_regret": self.total_regret,
            "cumulative_regret": self.cumulative_regret,
            "arms": [a.to_json() for a in self.arms],
        }

    def pull_log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "arm", "itn", "irs", "reward", "cost_per_daly_averted", "regret"])
        for p in self.pulls:
            w.writerow([p.t, p.arm_index, f"{p.policy.itn_coverage:.3f}", f"{p.policy.irs_coverage:.3f}",
                        repr(p.reward), cpd_to_json(p.cost_per_daly_averted),
                        "" if p.regret is None else repr(p.regret)])
        return buf.getvalue()


def run_bandit(config: BanditConfig, evaluator: Evaluator, grid: Sequence[Policy],
               oracle: Sequence[float] | None = None) -> BanditReport:
    """Spend ``config.budget`` pulls on ``grid``.

    ``oracle`` gives each arm's expected reward; without it regret is not
    tracked.  An evaluator timeout or failure ends the run early with
    ``complete=False``.
    """
    arms = make_arms(grid)
    report = BanditReport(config, arms)
    if oracle is not None and len(oracle) != len(arms):
        raise ValueError("oracle must give one expected reward per arm")
    if config.strategy == "ucb1" and 0 < config.budget < len(arms):
        raise ValueError("ucb1 needs a budget of at least one pull per arm")
    best = max(oracle) if oracle is not None else None
    rng = np.random.default_rng(config.rng_seed)
    total = 0.0
    for t in range(1, config.budget + 1):
        if config.strategy == "epsilon_greedy":
            k = select_epsilon_greedy(arms, t, config, rng)
        elif config.strategy == "ucb1":
            k = select_ucb1(arms, t, config)
        else:
            k = select_thompson(arms, config, rng)
        try:
            summary = evaluator(arms[k].policy)
        except (ClerkTimeout, TaskFailed, BrokerUnavailable) as exc:
            report.complete = False
            report.error = f"{type(exc).__name__}: {exc}"
            log.error("bandit run aborted at pull %d: %s", t, exc)
            break
        reward = reward_from(summary, config.reward_cap)
        arms[k].update(reward)
        regret = None
        if best is not None:
            regret = best - oracle[k]
            total += regret
            report.cumulative_regret.append(total)
        report.pulls.append(Pull(t, k, arms[k].policy, reward, summary.cost_per_daly_averted, regret))
    return report


def random_baseline_regret(oracle: Sequence[float], budget: int, rng_seed: int = 0) -> list[float]:
    """Cumulative regret of uniform random arm selection.

    Uniform selection ignores rewards, so no evaluations are needed.
    """
    rewards = np.asarray(oracle, dtype=float)
    rng = np.random.default_rng(rng_seed)
    picks = rng.integers(len(rewards), size=budget)
    return np.cumsum(rewards.max() - rewards[picks]).tolist()
