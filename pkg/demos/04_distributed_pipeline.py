"""
Broker, workers, clerk and store in one process
===============================================

The same pieces the CLI runs as separate processes, here on threads.
"""

import tempfile
import threading
from pathlib import Path

from polisim import Clerk, Datastore, SeedTemplate, policy_grid
from polisim.cli import surface_csv
from polisim.fabric import BrokerThread
from polisim.worker import worker_loop

tmp = Path(tempfile.mkdtemp())
template = SeedTemplate(replicates=3)
stop = threading.Event()

with BrokerThread() as broker, Datastore(tmp / "store.jsonl") as store:
    workers = [threading.Thread(target=worker_loop, args=(broker.address, f"w{i}"),
                                kwargs={"stop": stop, "poll_interval": 0.1}, daemon=True)
               for i in range(3)]
    for w in workers:
        w.start()

    with Clerk(broker.address, store, template) as clerk:
        summaries = clerk.evaluate_many(policy_grid(0.25))
        print(f"first pass: {clerk.stats.publishes} tasks published, {clerk.stats.cache_hits} cache hits")
        clerk.evaluate_many(policy_grid(0.25))
        print(f"second pass: {clerk.stats.publishes} tasks published, {clerk.stats.cache_hits} cache hits")

    stop.set()
    for w in workers:
        w.join()

    print(surface_csv(store.query_surface()))
    print(f"{len(store)} records in {store.path}")
