"""Append-only result store.

One canonical-JSON record per line::

    {"kind":"result","key":"<scenario_id>","body":{...},"stored_at":1718000000.0}

The whole log is scanned into an in-memory index on open.  A trailing line
without its newline (a torn write) is ignored and, for writable stores,
truncated away so the next append starts on a clean line.  A writer holds an
advisory ``flock`` on ``<path>.lock``; read-only handles take no lock.
"""

from __future__ import annotations

import fcntl
import json
import logging
import math
import os
import statistics
import threading
import time
from dataclasses import dataclass
from typing import Any, Iterator

from .policy import INEFFECTIVE, EvaluationResult, Policy, ScenarioDocument, canonical_json

__all__ = ["DUPLICATE", "STORED", "Datastore", "StoreLocked", "StoreRecord", "SurfaceRow"]

log = logging.getLogger(__name__)

STORED = "stored"
DUPLICATE = "duplicate"
SCENARIO = "scenario"
RESULT = "result"


class StoreLocked(RuntimeError):
    """Another process holds the writer lock."""


@dataclass(frozen=True)
class StoreRecord:
    kind: str
    key: str
    body: dict
    stored_at: float = 0.0

    @property
    def is_error(self) -> bool:
        return self.kind == RESULT and self.body.get("error") is not None

    def to_json(self) -> dict:
        return {"kind": self.kind, "key": self.key, "body": self.body, "stored_at": self.stored_at}

    @classmethod
    def from_json(cls, data: dict) -> StoreRecord:
        if data["kind"] not in (SCENARIO, RESULT):
            raise ValueError(f"unknown record kind {data['kind']!r}")
        return cls(data["kind"], str(data["key"]), dict(data["body"]), float(data.get("stored_at", 0.0)))

    @classmethod
    def scenario(cls, doc: ScenarioDocument) -> StoreRecord:
        return cls(SCENARIO, doc.scenario_id, doc.to_json())

    @classmethod
    def result(cls, result: EvaluationResult) -> StoreRecord:
        return cls(RESULT, result.scenario_id, result.to_json())


@dataclass(frozen=True)
class SurfaceRow:
    policy: Policy
    mean_cost_per_daly: float | None
    stddev: float | None
    n: int
    ineffective_n: int


class Datastore:
    """Content-addressed store over a JSON-lines log.

    ``put``/``get``/``has``/``query_surface`` are serialized by one lock, so a
    single handle may be shared between threads.
    """

    def __init__(self, path: str | os.PathLike, *, readonly: bool = False) -> None:
        self.path = os.fspath(path)
        self.readonly = readonly
        self._lock = threading.RLock()
        self._lockfile = None
        self._fh = None
        # kind -> key -> record; results hold the first non-error record,
        # or the first error record if no good one has arrived yet
        self._index: dict[str, dict[str, StoreRecord]] = {SCENARIO: {}, RESULT: {}}
        self._count = 0
        if not readonly:
            self._acquire_lock()
        self._load()
        if not readonly:
            self._fh = open(self.path, "a", encoding="utf-8")

    # -- lifecycle

    def _acquire_lock(self) -> None:
        d = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(d, exist_ok=True)
        self._lockfile = open(self.path + ".lock", "a")
        try:
            fcntl.flock(self._lockfile, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            self._lockfile.close()
            self._lockfile = None
            raise StoreLocked(f"{self.path} is locked by another writer") from None

    def _load(self) -> None:
        if not os.path.exists(self.path):
            return
        with open(self.path, "rb") as fh:
            data = fh.read()
        good_end = 0
        pos = 0
        while pos < len(data):
            nl = data.find(b"\n", pos)
            if nl < 0:
                break
            line = data[pos:nl]
            pos = nl + 1
            if line.strip():
                try:
                    self._index_record(StoreRecord.from_json(json.loads(line.decode("utf-8"))))
                except (ValueError, KeyError, TypeError) as exc:
                    log.warning("%s: skipping unreadable record at byte %d: %s", self.path, nl - len(line), exc)
            good_end = pos
        if good_end < len(data):
            log.warning("%s: ignoring %d-byte partial trailing record", self.path, len(data) - good_end)
            if not self.readonly:
                with open(self.path, "r+b") as fh:
                    fh.truncate(good_end)

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None
            if self._lockfile is not None:
                fcntl.flock(self._lockfile, fcntl.LOCK_UN)
                self._lockfile.close()
                self._lockfile = None

    def __enter__(self) -> Datastore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- index

    def _index_record(self, rec: StoreRecord) -> bool:
        self._count += 1
        table = self._index[rec.kind]
        current = table.get(rec.key)
        if current is None or (current.is_error and not rec.is_error):
            table[rec.key] = rec
            return True
        return False

    def _would_store(self, rec: StoreRecord) -> bool:
        current = self._index[rec.kind].get(rec.key)
        if current is None:
            return True
        if rec.kind == RESULT:
            # error records never shadow a good one, but are logged while no good one exists
            return current.is_error
        return False

    # -- public surface

    def put(self, record: StoreRecord | ScenarioDocument | EvaluationResult) -> str:
        """Append a record; returns ``"stored"`` or ``"duplicate"``.

        Duplicates are not written: the first scenario and the first
        non-error result for a key win.
        """
        if isinstance(record, ScenarioDocument):
            record = StoreRecord.scenario(record)
        elif isinstance(record, EvaluationResult):
            record = StoreRecord.result(record)
        if self.readonly:
            raise PermissionError(f"{self.path} is open read-only")
        with self._lock:
            if not self._would_store(record):
                return DUPLICATE
            if not record.stored_at:
                record = StoreRecord(record.kind, record.key, record.body, time.time())
            line = canonical_json(record.to_json()) + "\n"
            self._fh.write(line)
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._index_record(record)
            return STORED

    def get(self, key: str, kind: str = RESULT) -> StoreRecord | None:
        with self._lock:
            return self._index[kind].get(key)

    def has(self, key: str, kind: str = RESULT) -> bool:
        return self.get(key, kind) is not None

    def good_result(self, key: str) -> EvaluationResult | None:
        rec = self.get(key, RESULT)
        if rec is None or rec.is_error:
            return None
        return EvaluationResult.from_json(rec.body)

    def records(self, kind: str | None = None) -> Iterator[StoreRecord]:
        with self._lock:
            kinds = [kind] if kind else [SCENARIO, RESULT]
            out = [rec for k in kinds for rec in self._index[k].values()]
        return iter(out)

    def results(self, *, include_errors: bool = False) -> list[EvaluationResult]:
        return [EvaluationResult.from_json(r.body) for r in self.records(RESULT)
                if include_errors or not r.is_error]

    def __len__(self) -> int:
        """Number of records in the log (including shadowed error records)."""
        return self._count

    def query_surface(self) -> list[SurfaceRow]:
        """Aggregate cost per DALY averted per policy, sorted by (itn, irs).

        Every policy with at least one good result gets a row.  Ineffective
        results are excluded from mean/stddev and counted separately; a
        policy with no effective result has ``mean_cost_per_daly=None``.
        ``stddev`` uses the n-1 denominator and is ``None`` below two values.
        """
        groups: dict[Policy, list[Any]] = {}
        for res in self.results():
            groups.setdefault(res.policy, []).append(res.cost_per_daly_averted)
        rows = []
        for policy in sorted(groups):
            values = groups[policy]
            eff = [float(v) for v in values if v is not INEFFECTIVE and v is not None]
            ineffective_n = sum(1 for v in values if v is INEFFECTIVE)
            mean = math.fsum(eff) / len(eff) if eff else None
            sd = statistics.stdev(eff) if len(eff) >= 2 else None
            rows.append(SurfaceRow(policy, mean, sd, len(eff), ineffective_n))
        return rows

