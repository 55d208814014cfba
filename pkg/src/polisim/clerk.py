"""Task clerk: germinate scenarios, dedupe against the store, farm out work.

A :class:`SeedTemplate` fixes everything about a scenario except the policy
and the replicate index; :func:`germinate` merges the two into a
:class:`~polisim.policy.ScenarioDocument`.  Replicate ``i`` always runs with
seed ``base_seed + i``, so every policy sees the same random numbers as the
zero-coverage baseline it is priced against.

:class:`Clerk` talks to workers through the broker; :class:`LocalEvaluator`
runs the same pipeline in-process for tests and offline agent runs.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import economics
from .economics import EconSummary
from .fabric import RESULTS, TASKS, BrokerClient, ConnectionLost
from .policy import (
    INEFFECTIVE,
    U64_MASK,
    ZERO_POLICY,
    EpiParameters,
    EvaluationResult,
    InterventionEffects,
    Mode,
    Policy,
    ScenarioDocument,
)
from .store import Datastore
from .worker import evaluate_document

__all__ = [
    "Clerk",
    "ClerkTimeout",
    "LocalEvaluator",
    "SeedTemplate",
    "TaskFailed",
    "germinate",
]

log = logging.getLogger(__name__)

DEFAULT_TASK_TIMEOUT = 120.0


class ClerkTimeout(TimeoutError):
    """No result arrived for a task within the task timeout."""


class TaskFailed(RuntimeError):
    """A worker answered a task with an error result."""


@dataclass(frozen=True)
class SeedTemplate:
    epi: EpiParameters = field(default_factory=EpiParameters)
    effects: InterventionEffects = field(default_factory=InterventionEffects)
    horizon_days: int = 1095
    mode: str = Mode.STOCHASTIC
    base_seed: int = 0
    replicates: int = 1

    def __post_init__(self) -> None:
        if self.mode not in Mode.ALL:
            raise ValueError(f"mode must be one of {Mode.ALL}")
        if int(self.replicates) < 1:
            raise ValueError("replicates must be >= 1")
        if self.mode == Mode.EXPECTATION:
            # expectation mode is deterministic; extra replicates are identical
            object.__setattr__(self, "replicates", 1)
        if not 0 <= int(self.base_seed) <= U64_MASK:
            raise ValueError("base_seed must be an unsigned 64-bit integer")

    def replace(self, **changes) -> SeedTemplate:
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        return {
            "epi": self.epi.to_json(),
            "effects": self.effects.to_json(),
            "horizon_days": self.horizon_days,
            "mode": self.mode,
            "base_seed": self.base_seed,
            "replicates": self.replicates,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> SeedTemplate:
        kwargs = {k: data[k] for k in ("horizon_days", "mode", "base_seed", "replicates") if k in data}
        return cls(
            epi=EpiParameters.from_json(data.get("epi", {})),
            effects=InterventionEffects.from_json(data.get("effects", {})),
            **kwargs,
        )

    @classmethod
    def load(cls, path: str) -> SeedTemplate:
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def germinate(template: SeedTemplate, policy: Policy, replicate_index: int = 0) -> ScenarioDocument:
    """Expand a template and a policy into replicate ``replicate_index``'s scenario."""
    if not 0 <= replicate_index < template.replicates:
        raise ValueError(
            f"replicate_index {replicate_index} outside 0..{template.replicates - 1}"
            + (" (expectation mode forces one replicate)" if template.mode == Mode.EXPECTATION else "")
        )
    return _germinate(template, policy, replicate_index)


def _germinate(template: SeedTemplate, policy: Policy, replicate_index: int) -> ScenarioDocument:
    return ScenarioDocument(
        policy=policy,
        epi=template.epi,
        effects=template.effects,
        horizon_days=template.horizon_days,
        seed=(template.base_seed + replicate_index) & U64_MASK,
        mode=template.mode,
    )


def price(result: EvaluationResult, baseline_cases: float, epi: EpiParameters) -> EconSummary:
    return economics.cost_effectiveness((result.total_cases, result.cost), baseline_cases, epi)


@dataclass
class ClerkStats:
    publishes: int = 0
    cache_hits: int = 0
    results_consumed: int = 0
    duplicates: int = 0


class Clerk:
    """Evaluate policies through the broker, caching everything in a store.

    Several threads may call :meth:`evaluate_policy` at once.  Results come
    back on one listener connection and are matched to waiting callers by
    ``scenario_id``.
    """

    def __init__(self, broker_address, store: Datastore, template: SeedTemplate | None = None, *,
                 task_timeout: float = DEFAULT_TASK_TIMEOUT, connect_timeout: float = 60.0) -> None:
        self.store = store
        self.template = template or SeedTemplate()
        self.task_timeout = task_timeout
        self.stats = ClerkStats()
        self._pub = BrokerClient(broker_address, connect_timeout=connect_timeout)
        self._sub = BrokerClient(broker_address, connect_timeout=connect_timeout)
        self._pub_lock = threading.Lock()
        self._lock = threading.Lock()
        self._waiting: dict[str, threading.Event] = {}
        # baseline scenario id -> results waiting for it to be priced
        self._parked: dict[str, list[EvaluationResult]] = {}
        self._baseline: list[EvaluationResult] | None = None
        self._baseline_lock = threading.Lock()
        self._closing = threading.Event()
        self._listener: threading.Thread | None = None

    # -- lifecycle

    def start(self) -> Clerk:
        self._pub.connect()
        self._sub.connect()
        self._sub.subscribe(RESULTS)
        self._sub.ping()  # subscription registered before anything is published
        self._listener = threading.Thread(target=self._listen, name="clerk-results", daemon=True)
        self._listener.start()
        return self

    def close(self) -> None:
        self._closing.set()
        if self._listener is not None:
            self._listener.join(5)
        self._pub.close()
        self._sub.close()

    def __enter__(self) -> Clerk:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()

    # -- results

    def _listen(self) -> None:
        while not self._closing.is_set():
            try:
                delivery = self._sub.next(timeout=0.2)
            except TimeoutError:
                continue
            except ConnectionLost:
                if self._closing.is_set():
                    return
                log.warning("clerk result listener lost broker; reconnecting")
                self._sub.reconnect()
                continue
            try:
                self._accept(EvaluationResult.from_json(delivery.payload))
            except Exception:  # noqa: BLE001 - a bad result must not kill the listener
                log.exception("dropping unreadable result")
            try:
                self._sub.ack(delivery.delivery_id)
            except ConnectionLost:
                pass

    def _accept(self, result: EvaluationResult) -> None:
        sid = result.scenario_id
        with self._lock:
            self.stats.results_consumed += 1
        released: list[EvaluationResult] = []
        if result.ok:
            doc = self._stored_scenario(sid)
            if doc is None:
                log.warning("result %s has no known scenario; dropped", sid)
                return
            priced, base_id = self._price(result, doc)
            if priced is None:
                # the baseline for this seed has not come back yet
                with self._lock:
                    if self.store.good_result(base_id) is None:
                        self._parked.setdefault(base_id, []).append(result)
                        return
                priced, _ = self._price(result, doc)
            status = self.store.put(priced)
            if doc.policy.is_zero:
                with self._lock:
                    released = self._parked.pop(sid, [])
        else:
            status = self.store.put(result)
            with self._lock:
                orphans = self._parked.pop(sid, [])
            released = [dataclasses.replace(r, error=f"baseline {sid} failed: {result.error}")
                        for r in orphans]
        if status != "stored":
            with self._lock:
                self.stats.duplicates += 1
        with self._lock:
            ev = self._waiting.pop(sid, None)
        if ev is not None:
            ev.set()
        for parked in released:
            self._accept(parked)

    def _stored_scenario(self, sid: str) -> ScenarioDocument | None:
        rec = self.store.get(sid, "scenario")
        return None if rec is None else ScenarioDocument.from_json(rec.body)

    def _price(self, result: EvaluationResult, doc: ScenarioDocument):
        """Price ``result`` against its same-seed baseline; ``(None, id)`` if that is missing."""
        if doc.policy.is_zero:
            return result.priced(INEFFECTIVE), doc.scenario_id
        base_doc = dataclasses.replace(doc, policy=ZERO_POLICY)
        base = self.store.good_result(base_doc.scenario_id)
        if base is None:
            return None, base_doc.scenario_id
        return result.priced(price(result, base.total_cases, doc.epi).cost_per_daly_averted), None

    # -- submission

    def _publish(self, doc: ScenarioDocument) -> None:
        with self._pub_lock:
            try:
                self._pub.publish(TASKS, doc.to_json())
            except ConnectionLost:
                self._pub.reconnect()
                self._pub.publish(TASKS, doc.to_json())
        with self._lock:
            self.stats.publishes += 1

    def run_documents(self, docs: Sequence[ScenarioDocument]) -> list[EvaluationResult]:
        """Results for ``docs``, simulating only those not already stored.

        Each document's zero-policy baseline is evaluated too, since results
        are priced against it.
        """
        waits: list[tuple[ScenarioDocument, threading.Event]] = []
        to_publish = []
        missing: dict[str, ScenarioDocument] = {}
        for doc in docs:
            if self.store.good_result(doc.scenario_id) is not None:
                with self._lock:
                    self.stats.cache_hits += 1
            else:
                missing[doc.scenario_id] = doc
        for doc in list(missing.values()):
            if not doc.policy.is_zero:
                base = dataclasses.replace(doc, policy=ZERO_POLICY)
                if base.scenario_id not in missing and self.store.good_result(base.scenario_id) is None:
                    missing[base.scenario_id] = base
        for doc in missing.values():
            with self._lock:
                ev = self._waiting.get(doc.scenario_id)
                fresh = ev is None
                if fresh:
                    ev = self._waiting[doc.scenario_id] = threading.Event()
            waits.append((doc, ev))
            if fresh:
                self.store.put(doc)
                to_publish.append(doc)
        for doc in to_publish:
            self._publish(doc)
        deadline = time.monotonic() + self.task_timeout
        for doc, ev in waits:
            if not ev.wait(max(0.0, deadline - time.monotonic())):
                raise ClerkTimeout(f"no result for scenario {doc.scenario_id} within {self.task_timeout}s")
        out = []
        for doc in docs:
            rec = self.store.get(doc.scenario_id)
            if rec is None:
                raise ClerkTimeout(f"result for {doc.scenario_id} was not recorded")
            if rec.is_error:
                raise TaskFailed(f"scenario {doc.scenario_id}: {rec.body['error']}")
            out.append(EvaluationResult.from_json(rec.body))
        return out

    def baseline_results(self) -> list[EvaluationResult]:
        with self._baseline_lock:
            if self._baseline is None:
                docs = [germinate(self.template, ZERO_POLICY, i) for i in range(self.template.replicates)]
                self._baseline = self.run_documents(docs)
            return self._baseline

    def replicate_summaries(self, policy: Policy) -> list[EconSummary]:
        return self.summaries_many([policy])[0]

    def summaries_many(self, policies: Iterable[Policy]) -> list[list[EconSummary]]:
        policies = list(policies)
        base = self.baseline_results()
        n = self.template.replicates
        docs = [germinate(self.template, p, i) for p in policies for i in range(n)]
        results = self.run_documents(docs)
        epi = self.template.epi
        return [
            [price(results[k * n + i], base[i].total_cases, epi) for i in range(n)]
            for k in range(len(policies))
        ]

    def evaluate_policy(self, policy: Policy) -> EconSummary:
        """Replicate-mean economics for ``policy`` (see :func:`economics.aggregate`)."""
        return economics.aggregate(self.replicate_summaries(policy))

    def evaluate_many(self, policies: Iterable[Policy]) -> list[EconSummary]:
        """Evaluate several policies with all their tasks in flight at once."""
        return [economics.aggregate(s) for s in self.summaries_many(policies)]

    __call__ = evaluate_policy


class LocalEvaluator:
    """In-process stand-in for :class:`Clerk`.

    With ``fresh_replicates=False`` it behaves like the clerk: every call for
    a policy returns the same replicate-mean summary.  With
    ``fresh_replicates=True`` (stochastic mode only) the ``k``-th call for a
    policy runs replicate ``k`` alone, i.e. seed ``base_seed + k``, priced
    against the baseline with the same seed; this makes each pull an
    independent draw.  Simulations are memoized per scenario id; pass the
    same ``memo`` dict to several evaluators to share them.
    """

    def __init__(self, template: SeedTemplate | None = None, *, fresh_replicates: bool = False,
                 store: Datastore | None = None, memo: dict | None = None) -> None:
        self.template = template or SeedTemplate()
        self.fresh_replicates = fresh_replicates and self.template.mode == Mode.STOCHASTIC
        self.store = store
        self.simulations = 0
        # may be shared between evaluators over the same template
        self._memo: dict[str, EvaluationResult] = {} if memo is None else memo
        self._pulls: dict[Policy, int] = {}

    def result(self, doc: ScenarioDocument) -> EvaluationResult:
        hit = self._memo.get(doc.scenario_id)
        if hit is None and self.store is not None:
            hit = self.store.good_result(doc.scenario_id)
        if hit is None:
            hit = evaluate_document(doc, "local")
            self.simulations += 1
            if self.store is not None:
                base = None if doc.policy.is_zero else self.result(dataclasses.replace(doc, policy=ZERO_POLICY))
                cpd = (INEFFECTIVE if base is None
                       else price(hit, base.total_cases, doc.epi).cost_per_daly_averted)
                hit = hit.priced(cpd)
                self.store.put(doc)
                self.store.put(hit)
        self._memo[doc.scenario_id] = hit
        return hit

    def replicate_summaries(self, policy: Policy, replicates: Iterable[int]) -> list[EconSummary]:
        out = []
        for i in replicates:
            doc = _germinate(self.template, policy, i)
            base = self.result(_germinate(self.template, ZERO_POLICY, i))
            out.append(price(self.result(doc), base.total_cases, self.template.epi))
        return out

    def evaluate_policy(self, policy: Policy) -> EconSummary:
        if self.fresh_replicates:
            k = self._pulls.get(policy, 0)
            self._pulls[policy] = k + 1
            return economics.aggregate(self.replicate_summaries(policy, [k]))
        return economics.aggregate(self.replicate_summaries(policy, range(self.template.replicates)))

    __call__ = evaluate_policy
