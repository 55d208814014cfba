"""Domain types shared by the clerk, workers, store and agents.

Everything here is immutable.  The canonical JSON form produced by
:func:`canonical_json` is both the hashing input for scenario ids and the
payload that travels over the message fabric, so its byte layout is fixed:
keys in declaration order, no whitespace, coverages with exactly three
decimals, other reals in shortest round-trip form.

Coverages are fractions of *persons*.  The intervention levers are usually
quoted per household; the surrogate model has no household structure, so the
two are treated as the same thing.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

__all__ = [
    "INEFFECTIVE",
    "BadStep",
    "EpiParameters",
    "EvaluationResult",
    "InterventionEffects",
    "Mode",
    "OutOfRange",
    "Policy",
    "ScenarioDocument",
    "canonical_hash",
    "canonical_json",
    "make_policy",
    "policy_grid",
]

U64_MASK = (1 << 64) - 1


class OutOfRange(ValueError):
    """A coverage or parameter lies outside its admissible range."""


class BadStep(ValueError):
    """Grid step does not divide the unit interval."""


class Mode:
    STOCHASTIC = "stochastic"
    EXPECTATION = "expectation"
    ALL = (STOCHASTIC, EXPECTATION)


class _Ineffective:
    """Sentinel for a policy that averts no DALYs.

    Compares greater than every number so that sorting by cost per DALY puts
    ineffective policies last.
    """

    _instance: _Ineffective | None = None

    def __new__(cls) -> _Ineffective:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INEFFECTIVE"

    __str__ = __repr__

    def __reduce__(self):
        return (_Ineffective, ())

    def __eq__(self, other: object) -> bool:
        return other is self

    def __hash__(self) -> int:
        return hash("INEFFECTIVE")

    def __lt__(self, other: object) -> bool:
        return False

    def __le__(self, other: object) -> bool:
        return other is self

    def __gt__(self, other: object) -> bool:
        return other is not self

    def __ge__(self, other: object) -> bool:
        return True


INEFFECTIVE = _Ineffective()


def cpd_to_json(value):
    if value is INEFFECTIVE:
        return "INEFFECTIVE"
    return value


def cpd_from_json(value):
    if value == "INEFFECTIVE":
        return INEFFECTIVE
    if value is None:
        return None
    return float(value)


# --------------------------------------------------------------------------
# canonical serialization


class _Fixed3(float):
    """Float rendered with exactly three decimals in canonical JSON."""


def _encode(obj: Any) -> str:
    if isinstance(obj, _Fixed3):
        return f"{float(obj):.3f}"
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, int):
        return str(int(obj))
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite float {obj!r} has no canonical form")
        return repr(obj)
    if isinstance(obj, Mapping):
        return "{" + ",".join(
            json.dumps(str(k), ensure_ascii=False) + ":" + _encode(v)
            for k, v in obj.items()
        ) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    """Render ``obj`` as canonical JSON text.

    Accepts the domain dataclasses (via their ``to_json`` method) or plain
    dicts/lists/scalars.  Dict keys keep insertion order.
    """
    if hasattr(obj, "to_json"):
        obj = obj.to_json()
    return _encode(obj)


def _hash_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# policy


def _coverage(value: float, name: str) -> float:
    v = float(value)
    if not (0.0 <= v <= 1.0):
        raise OutOfRange(f"{name} must lie in [0, 1], got {value!r}")
    # canonicalize to 3 dp so float noise never splits a cache entry
    return float(f"{v:.3f}")


@dataclass(frozen=True, order=True)
class Policy:
    itn_coverage: float
    irs_coverage: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "itn_coverage", _coverage(self.itn_coverage, "itn_coverage"))
        object.__setattr__(self, "irs_coverage", _coverage(self.irs_coverage, "irs_coverage"))

    def to_json(self) -> dict:
        return {
            "itn_coverage": _Fixed3(self.itn_coverage),
            "irs_coverage": _Fixed3(self.irs_coverage),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> Policy:
        return cls(data["itn_coverage"], data["irs_coverage"])

    def __str__(self) -> str:
        return f"({self.itn_coverage:.3f}, {self.irs_coverage:.3f})"

    @property
    def is_zero(self) -> bool:
        return self.itn_coverage == 0.0 and self.irs_coverage == 0.0


ZERO_POLICY = Policy(0.0, 0.0)


def make_policy(itn: float, irs: float) -> Policy:
    """Build a policy, raising :class:`OutOfRange` outside the unit square."""
    return Policy(itn, irs)


def policy_grid(step: float = 0.1) -> list[Policy]:
    """All policies on a regular grid over the unit square.

    Row-major: ITN coverage varies slowest.

    >>> [str(p) for p in policy_grid(0.5)][:3]
    ['(0.000, 0.000)', '(0.000, 0.500)', '(0.000, 1.000)']
    """
    step = float(step)
    if not (0.0 < step <= 1.0):
        raise BadStep(f"step must lie in (0, 1], got {step!r}")
    inv = 1.0 / step
    k = round(inv)
    if abs(inv - k) > 1e-9:
        raise BadStep(f"1/step must be an integer, got 1/{step!r} = {inv!r}")
    levels = [i / k for i in range(k + 1)]
    return [Policy(i, j) for i in levels for j in levels]


# --------------------------------------------------------------------------
# parameters


def _reals(obj, names: Iterable[str]) -> None:
    for name in names:
        value = float(getattr(obj, name))
        if not math.isfinite(value):
            raise OutOfRange(f"{name} must be finite")
        object.__setattr__(obj, name, value)


@dataclass(frozen=True)
class EpiParameters:
    """Parameters of the surrogate transmission model and the DALY tally.

    Rates are per day.  ``m`` is mosquitoes per human, ``a`` bites per
    mosquito per day, ``b``/``c`` per-bite transmission probabilities
    (mosquito to human, human to mosquito), ``g`` mosquito mortality,
    ``n_eip`` the extrinsic incubation period in days and ``r`` the human
    recovery rate.
    """

    m: float = 20.0
    a: float = 0.3
    b: float = 0.5
    c: float = 0.5
    g: float = 0.1
    n_eip: float = 10.0
    r: float = 0.01
    population: int = 10_000
    cfr: float = 0.003
    disability_weight: float = 0.2
    episode_duration_days: float = 14.0
    yll_per_death: float = 30.0

    _REALS = ("m", "a", "b", "c", "g", "n_eip", "r", "cfr",
              "disability_weight", "episode_duration_days", "yll_per_death")

    def __post_init__(self) -> None:
        _reals(self, self._REALS)
        if isinstance(self.population, bool) or int(self.population) != self.population:
            raise OutOfRange("population must be an integer")
        object.__setattr__(self, "population", int(self.population))
        for name in ("m", "a", "b", "c", "g", "n_eip", "r"):
            if getattr(self, name) <= 0:
                raise OutOfRange(f"{name} must be strictly positive")
        for name in ("b", "c", "cfr", "disability_weight"):
            if getattr(self, name) > 1:
                raise OutOfRange(f"{name} is a probability and must be <= 1")
        for name in ("cfr", "disability_weight", "episode_duration_days", "yll_per_death"):
            if getattr(self, name) < 0:
                raise OutOfRange(f"{name} must be non-negative")
        if self.population < 1:
            raise OutOfRange("population must be >= 1")

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_json(cls, data: Mapping) -> EpiParameters:
        return cls(**_known(cls, data))


@dataclass(frozen=True)
class InterventionEffects:
    """Entomological effect sizes at full coverage and per-person-year costs."""

    kappa_bite: float = 0.5
    kappa_kill_itn: float = 0.44
    kappa_kill_irs: float = 0.6
    unit_cost_itn: float = 2.50
    unit_cost_irs: float = 5.00

    def __post_init__(self) -> None:
        _reals(self, [f.name for f in dataclasses.fields(self)])
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise OutOfRange(f"{f.name} must be non-negative")
        if self.kappa_bite > 1:
            raise OutOfRange("kappa_bite must be <= 1")

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_json(cls, data: Mapping) -> InterventionEffects:
        return cls(**_known(cls, data))


def _known(cls, data: Mapping) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    return {k: v for k, v in data.items() if k in names}


def _check_seed(seed: int) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not (0 <= int(seed) <= U64_MASK):
        raise OutOfRange(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def _check_mode(mode: str) -> str:
    if mode not in Mode.ALL:
        raise ValueError(f"mode must be one of {Mode.ALL}, got {mode!r}")
    return mode


# --------------------------------------------------------------------------
# scenario documents


class ScenarioIdMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioDocument:
    """Full parameterization of one simulation task.

    ``scenario_id`` is derived, never supplied: it is the SHA-256 of the
    canonical JSON of the remaining fields.
    """

    policy: Policy
    epi: EpiParameters = field(default_factory=EpiParameters)
    effects: InterventionEffects = field(default_factory=InterventionEffects)
    horizon_days: int = 1095
    seed: int = 0
    mode: str = Mode.STOCHASTIC
    scenario_id: str = field(init=False, default="")

    def __post_init__(self) -> None:
        if isinstance(self.horizon_days, bool) or int(self.horizon_days) != self.horizon_days:
            raise OutOfRange("horizon_days must be an integer")
        if self.horizon_days < 0:
            raise OutOfRange("horizon_days must be non-negative")
        object.__setattr__(self, "horizon_days", int(self.horizon_days))
        object.__setattr__(self, "seed", _check_seed(self.seed))
        _check_mode(self.mode)
        object.__setattr__(self, "scenario_id", canonical_hash(self))

    def content(self) -> dict:
        return {
            "policy": self.policy.to_json(),
            "epi": self.epi.to_json(),
            "effects": self.effects.to_json(),
            "horizon_days": self.horizon_days,
            "seed": self.seed,
            "mode": self.mode,
        }

    def to_json(self) -> dict:
        return {"scenario_id": self.scenario_id, **self.content()}

    @classmethod
    def from_json(cls, data: Mapping, *, verify: bool = True) -> ScenarioDocument:
        doc = cls(
            policy=Policy.from_json(data["policy"]),
            epi=EpiParameters.from_json(data["epi"]),
            effects=InterventionEffects.from_json(data["effects"]),
            horizon_days=data["horizon_days"],
            seed=data["seed"],
            mode=data["mode"],
        )
        if verify and data.get("scenario_id") != doc.scenario_id:
            raise ScenarioIdMismatch(
                f"scenario_id {data.get('scenario_id')!r} does not match content hash {doc.scenario_id}"
            )
        return doc


def canonical_hash(doc: ScenarioDocument | Mapping) -> str:
    """Lowercase hex SHA-256 of a scenario's canonical content.

    ``doc`` may be a :class:`ScenarioDocument` or a mapping of its fields;
    any ``scenario_id`` key is ignored.
    """
    if isinstance(doc, ScenarioDocument):
        content = doc.content()
    else:
        content = {k: v for k, v in doc.items() if k != "scenario_id"}
    return _hash_text(canonical_json(content))


# --------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class EvaluationResult:
    scenario_id: str
    policy: Policy
    total_cases: float = 0.0
    total_deaths: float = 0.0
    dalys: float = 0.0
    cost: float = 0.0
    cost_per_daly_averted: Any = None  # float, INEFFECTIVE, or None until priced
    wall_time_ms: float = 0.0
    worker_id: str = ""
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_json(self) -> dict:
        out = {
            "scenario_id": self.scenario_id,
            "policy": self.policy.to_json(),
            "total_cases": float(self.total_cases),
            "total_deaths": float(self.total_deaths),
            "dalys": float(self.dalys),
            "cost": float(self.cost),
            "cost_per_daly_averted": cpd_to_json(self.cost_per_daly_averted),
            "wall_time_ms": float(self.wall_time_ms),
            "worker_id": self.worker_id,
        }
        if self.error is not None:
            out["error"] = self.error
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> EvaluationResult:
        return cls(
            scenario_id=data["scenario_id"],
            policy=Policy.from_json(data["policy"]),
            total_cases=float(data.get("total_cases", 0.0)),
            total_deaths=float(data.get("total_deaths", 0.0)),
            dalys=float(data.get("dalys", 0.0)),
            cost=float(data.get("cost", 0.0)),
            cost_per_daly_averted=cpd_from_json(data.get("cost_per_daly_averted")),
            wall_time_ms=float(data.get("wall_time_ms", 0.0)),
            worker_id=str(data.get("worker_id", "")),
            error=data.get("error"),
        )

    def priced(self, cost_per_daly_averted) -> EvaluationResult:
        return dataclasses.replace(self, cost_per_daly_averted=cost_per_daly_averted)
