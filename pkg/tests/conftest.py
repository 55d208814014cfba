import os
import subprocess
import sys
import threading

import pytest

from polisim.fabric import BrokerThread
from polisim.store import Datastore
from polisim.worker import worker_loop


@pytest.fixture
def broker():
    with BrokerThread() as b:
        yield b


@pytest.fixture
def store(tmp_path):
    with Datastore(tmp_path / "store.jsonl") as s:
        yield s


class WorkerThreads:
    def __init__(self):
        self.stop = threading.Event()
        self.threads = []

    def start(self, address, n=2):
        for i in range(n):
            t = threading.Thread(target=worker_loop, args=(address, f"t{len(self.threads)}"),
                                 kwargs={"stop": self.stop, "poll_interval": 0.05,
                                         "connect_timeout": 5.0},
                                 daemon=True)
            t.start()
            self.threads.append(t)

    def close(self):
        self.stop.set()
        for t in self.threads:
            t.join(10)


@pytest.fixture
def worker_threads():
    w = WorkerThreads()
    yield w
    w.close()


def polisim_cmd(*args):
    return [sys.executable, "-m", "polisim", *args]


def spawn_worker(address, worker_id, **kwargs):
    return subprocess.Popen(
        polisim_cmd("worker", "--broker", address, "--worker-id", worker_id, "--connect-timeout-secs", "10"),
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, env={**os.environ}, **kwargs,
    )


@pytest.fixture
def worker_procs():
    procs = []

    def start(address, worker_id):
        p = spawn_worker(address, worker_id)
        procs.append(p)
        return p

    yield start
    for p in procs:
        if p.poll() is None:
            p.kill()
        p.wait(10)
