"""
Losing a worker and tearing a write
===================================

A consumer that takes a task and disappears does not lose it: the broker
hands the task to someone else under a new delivery id.  A half-written
store record is dropped on the next open.
"""

import tempfile
from pathlib import Path

from polisim import Datastore, Policy, ScenarioDocument
from polisim.fabric import BrokerClient, BrokerThread
from polisim.worker import evaluate_document

with BrokerThread() as broker:
    doomed = BrokerClient(broker.address).connect()
    doomed.subscribe("tasks")
    survivor = BrokerClient(broker.address).connect()
    survivor.subscribe("tasks")
    survivor.ping()

    doc = ScenarioDocument(Policy(0.3, 0.3), seed=1)
    with BrokerClient(broker.address).connect() as clerk:
        clerk.publish("tasks", doc.to_json())

    first = doomed.next(timeout=5)
    print("doomed consumer got delivery", first.delivery_id)
    doomed.close()  # never acks

    second = survivor.next(timeout=5)
    print("survivor got delivery", second.delivery_id, "for the same scenario:",
          second.payload["scenario_id"] == first.payload["scenario_id"])
    survivor.ack(second.delivery_id)
    survivor.close()

    for e in broker.events():
        if e.get("channel") == "tasks" and e["event"] in ("deliver", "requeue", "ack"):
            print(f"  {e['event']:8s} delivery {e['delivery_id']} conn {e['conn']}")

path = Path(tempfile.mkdtemp()) / "store.jsonl"
with Datastore(path) as store:
    for seed in range(3):
        store.put(evaluate_document(ScenarioDocument(Policy(0.5, 0.5), seed=seed)))

data = path.read_bytes()
path.write_bytes(data[:-40])  # crash in the middle of the last record
with Datastore(path) as store:
    print(f"reopened after torn write: {len(store)} intact records, file ends cleanly:",
          path.read_bytes().endswith(b"\n"))
