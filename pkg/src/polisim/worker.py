"""Task worker: consume scenarios from ``tasks``, publish results to ``results``.

Workers are stateless.  A result is published *before* its task is acked, so
a crash in between causes redelivery (and possibly a duplicate result, which
the store drops) rather than a lost result.  Tasks that cannot be parsed or
whose ``scenario_id`` does not match their content are answered with an
error result and acked so they are not redelivered forever.
"""

from __future__ import annotations

import logging
import os
import socket
import threading
import time

from . import economics
from .fabric import RESULTS, TASKS, BrokerClient, BrokerUnavailable, ConnectionLost
from .model import simulate
from .policy import ZERO_POLICY, EvaluationResult, Policy, ScenarioDocument

__all__ = ["default_worker_id", "evaluate_document", "handle_task", "worker_loop"]

log = logging.getLogger(__name__)


def default_worker_id() -> str:
    return f"{socket.gethostname()}-{os.getpid()}"


def evaluate_document(doc: ScenarioDocument, worker_id: str = "") -> EvaluationResult:
    """Simulate one scenario.  ``cost_per_daly_averted`` is left unpriced."""
    t0 = time.perf_counter()
    out = simulate(doc)
    return EvaluationResult(
        scenario_id=doc.scenario_id,
        policy=doc.policy,
        total_cases=out.total_cases,
        total_deaths=economics.deaths(out.total_cases, doc.epi),
        dalys=economics.dalys(out.total_cases, doc.epi),
        cost=economics.policy_cost(doc.policy, doc.epi, doc.effects, doc.horizon_days),
        cost_per_daly_averted=None,
        wall_time_ms=(time.perf_counter() - t0) * 1000.0,
        worker_id=worker_id,
    )


def handle_task(payload, worker_id: str = "") -> EvaluationResult:
    try:
        doc = ScenarioDocument.from_json(payload)
    except Exception as exc:  # noqa: BLE001 - anything unparseable is a poison pill
        sid = payload.get("scenario_id", "") if isinstance(payload, dict) else ""
        try:
            policy = Policy.from_json(payload["policy"])
        except Exception:  # noqa: BLE001
            policy = ZERO_POLICY
        log.warning("rejecting task %s: %s", sid or "<no id>", exc)
        return EvaluationResult(scenario_id=str(sid), policy=policy, worker_id=worker_id,
                                error=f"{type(exc).__name__}: {exc}")
    return evaluate_document(doc, worker_id)


def _reconnect(client: BrokerClient, stop: threading.Event) -> None:
    try:
        client.reconnect(stop)
    except BrokerUnavailable:
        if not stop.is_set():
            raise


def worker_loop(address, worker_id: str | None = None, *, stop: threading.Event | None = None,
                max_tasks: int | None = None, connect_timeout: float = 60.0,
                poll_interval: float = 0.5) -> int:
    """Serve tasks until ``stop`` is set or ``max_tasks`` are done.

    Returns the number of tasks handled.  Raises ``BrokerUnavailable`` if the
    broker cannot be (re)reached within ``connect_timeout``.
    """
    worker_id = worker_id or default_worker_id()
    stop = stop or threading.Event()
    client = BrokerClient(address, connect_timeout=connect_timeout).connect(stop)
    client.subscribe(TASKS)
    log.info("worker %s consuming %s at %s:%d", worker_id, TASKS, *client.address)
    done = 0
    try:
        while not stop.is_set() and (max_tasks is None or done < max_tasks):
            try:
                delivery = client.next(timeout=poll_interval)
            except TimeoutError:
                continue
            except ConnectionLost:
                log.warning("worker %s lost broker connection; reconnecting", worker_id)
                _reconnect(client, stop)
                continue
            result = handle_task(delivery.payload, worker_id)
            try:
                client.publish(RESULTS, result.to_json())
                client.ack(delivery.delivery_id)
            except ConnectionLost:
                # broker requeues the unacked task; our result may be a duplicate
                _reconnect(client, stop)
                continue
            done += 1
    finally:
        client.close()
    return done
