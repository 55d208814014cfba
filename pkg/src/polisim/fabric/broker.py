"""Work-queue broker.

:class:`QueueCore` holds all channel state and is pure: every call returns
the messages to send, and time comes from an injectable clock.  The asyncio
:class:`Broker` feeds it from one event loop, so mutations are totally
ordered.

Semantics per channel: FIFO ``pending`` queue, competing consumers with
prefetch 1, explicit ``ack``; an unacked delivery returns to the head of
``pending`` when its consumer disconnects or its visibility deadline passes,
and is redelivered under a fresh ``delivery_id``.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable

from .codec import HEADER, ProtocolError, check_length, decode_body, encode

__all__ = ["Broker", "BrokerThread", "QueueCore"]

log = logging.getLogger(__name__)

PREFETCH = 1
DEFAULT_VISIBILITY_TIMEOUT = 60.0

Outputs = list  # list[tuple[conn, dict]]


@dataclass
class _InFlight:
    payload: Any
    consumer: Hashable
    deadline: float


@dataclass
class ChannelState:
    name: str
    pending: deque = field(default_factory=deque)
    in_flight: dict[int, _InFlight] = field(default_factory=dict)
    subscribers: list = field(default_factory=list)
    unacked: dict = field(default_factory=dict)  # consumer -> count
    rr: int = 0

    def idle(self, consumer) -> bool:
        return self.unacked.get(consumer, 0) < PREFETCH


def _payload_key(payload: Any) -> Any:
    if isinstance(payload, dict):
        return payload.get("scenario_id")
    return None


class QueueCore:
    """Channel state machine shared by the network broker and unit tests."""

    def __init__(self, visibility_timeout: float = DEFAULT_VISIBILITY_TIMEOUT,
                 clock: Callable[[], float] = time.monotonic,
                 event_sink: Callable[[dict], None] | None = None) -> None:
        self.visibility_timeout = float(visibility_timeout)
        self.clock = clock
        self.channels: dict[str, ChannelState] = {}
        self._next_id = itertools.count(1)
        self._owner: dict[int, str] = {}  # delivery_id -> channel
        self._seq = itertools.count()
        self.events: list[dict] = []
        self._sink = event_sink if event_sink is not None else self.events.append

    def _event(self, event: str, **fields) -> None:
        self._sink({"seq": next(self._seq), "t": self.clock(), "event": event, **fields})

    def channel(self, name: str) -> ChannelState:
        ch = self.channels.get(name)
        if ch is None:
            ch = self.channels[name] = ChannelState(name)
        return ch

    # -- events from connections

    def connect(self, conn) -> None:
        self._event("connect", conn=conn)

    def disconnect(self, conn) -> Outputs:
        self._event("disconnect", conn=conn)
        out: Outputs = []
        for ch in self.channels.values():
            mine = sorted(did for did, f in ch.in_flight.items() if f.consumer == conn)
            self._requeue(ch, mine, "disconnect")
            if conn in ch.subscribers:
                idx = ch.subscribers.index(conn)
                ch.subscribers.remove(conn)
                if idx < ch.rr:
                    ch.rr -= 1
            ch.unacked.pop(conn, None)
            out += self.dispatch(ch)
        return out

    def handle(self, conn, msg: dict) -> Outputs:
        """Apply one validated message from ``conn``."""
        kind = msg["type"]
        if kind == "publish":
            ch = self.channel(msg["channel"])
            ch.pending.append(msg["payload"])
            self._event("publish", conn=conn, channel=ch.name, key=_payload_key(msg["payload"]))
            return self.dispatch(ch)
        if kind == "subscribe":
            ch = self.channel(msg["channel"])
            if conn not in ch.subscribers:
                ch.subscribers.append(conn)
            self._event("subscribe", conn=conn, channel=ch.name)
            return self.dispatch(ch)
        if kind == "ack":
            return self.ack(conn, msg["delivery_id"])
        if kind == "ping":
            return [(conn, {"type": "pong"})]
        # pong / deliver / error from a client carry no meaning for the broker
        return []

    def ack(self, conn, delivery_id: int) -> Outputs:
        name = self._owner.get(delivery_id)
        ch = self.channels.get(name) if name is not None else None
        flight = ch.in_flight.get(delivery_id) if ch is not None else None
        if flight is None or flight.consumer != conn:
            reason = f"unknown or stale delivery_id {delivery_id}"
            self._event("error", conn=conn, reason=reason)
            return [(conn, {"type": "error", "reason": reason})]
        del ch.in_flight[delivery_id]
        del self._owner[delivery_id]
        ch.unacked[conn] -= 1
        self._event("ack", conn=conn, channel=ch.name, delivery_id=delivery_id,
                    key=_payload_key(flight.payload))
        return self.dispatch(ch)

    def expire(self, now: float | None = None) -> Outputs:
        """Requeue every delivery whose visibility deadline has passed."""
        now = self.clock() if now is None else now
        out: Outputs = []
        for ch in self.channels.values():
            late = sorted(did for did, f in ch.in_flight.items() if f.deadline <= now)
            if late:
                self._requeue(ch, late, "timeout")
                out += self.dispatch(ch)
        return out

    # -- internals

    def _requeue(self, ch: ChannelState, delivery_ids: list[int], reason: str) -> None:
        # push in reverse so the oldest delivery ends up at the head
        for did in reversed(delivery_ids):
            flight = ch.in_flight.pop(did)
            del self._owner[did]
            ch.unacked[flight.consumer] -= 1
            ch.pending.appendleft(flight.payload)
            self._event("requeue", channel=ch.name, delivery_id=did, conn=flight.consumer,
                        reason=reason, key=_payload_key(flight.payload))

    def _next_idle(self, ch: ChannelState):
        n = len(ch.subscribers)
        for i in range(n):
            idx = (ch.rr + i) % n
            consumer = ch.subscribers[idx]
            if ch.idle(consumer):
                ch.rr = (idx + 1) % n
                return consumer
        return None

    def dispatch(self, ch: ChannelState) -> Outputs:
        out: Outputs = []
        while ch.pending:
            consumer = self._next_idle(ch)
            if consumer is None:
                break
            payload = ch.pending.popleft()
            did = next(self._next_id)
            ch.in_flight[did] = _InFlight(payload, consumer, self.clock() + self.visibility_timeout)
            self._owner[did] = ch.name
            ch.unacked[consumer] = ch.unacked.get(consumer, 0) + 1
            self._event("deliver", conn=consumer, channel=ch.name, delivery_id=did,
                        key=_payload_key(payload))
            out.append((consumer, {"type": "deliver", "channel": ch.name,
                                   "delivery_id": did, "payload": payload}))
        return out

    def stats(self) -> dict[str, dict[str, int]]:
        return {name: {"pending": len(ch.pending), "in_flight": len(ch.in_flight),
                       "subscribers": len(ch.subscribers)}
                for name, ch in self.channels.items()}


class JsonlEventLog:
    """Event sink writing one JSON object per line, flushed per event."""

    def __init__(self, path: str) -> None:
        self._fh = open(path, "a", encoding="utf-8")

    def __call__(self, event: dict) -> None:
        self._fh.write(json.dumps(event, separators=(",", ":")) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


class Broker:
    """TCP front end for :class:`QueueCore`."""

    def __init__(self, host: str = "127.0.0.1", port: int = 5680, *,
                 visibility_timeout: float = DEFAULT_VISIBILITY_TIMEOUT,
                 event_sink: Callable[[dict], None] | None = None,
                 sweep_interval: float | None = None) -> None:
        self.host = host
        self.port = port
        self.core = QueueCore(visibility_timeout, event_sink=event_sink)
        self.sweep_interval = sweep_interval or max(0.01, min(1.0, visibility_timeout / 4))
        self._writers: dict[int, asyncio.StreamWriter] = {}
        self._conn_ids = itertools.count(1)
        self._server: asyncio.base_events.Server | None = None
        self._sweeper: asyncio.Task | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.host, self.port

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._serve_conn, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._sweeper = asyncio.create_task(self._sweep())

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def stop(self) -> None:
        if self._sweeper is not None:
            self._sweeper.cancel()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for w in list(self._writers.values()):
            w.close()

    def _send(self, outputs: Outputs) -> None:
        for conn, msg in outputs:
            w = self._writers.get(conn)
            if w is None or w.is_closing():
                continue
            w.write(encode(msg))

    async def _sweep(self) -> None:
        while True:
            await asyncio.sleep(self.sweep_interval)
            self._send(self.core.expire())

    async def _serve_conn(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        conn = next(self._conn_ids)
        self._writers[conn] = writer
        self.core.connect(conn)
        try:
            while True:
                header = await reader.readexactly(HEADER.size)
                (length,) = HEADER.unpack(header)
                check_length(length)
                msg = decode_body(await reader.readexactly(length))
                self._send(self.core.handle(conn, msg))
                await writer.drain()
        except ProtocolError as exc:
            log.info("conn %d: protocol error: %s", conn, exc)
            self.core._event("error", conn=conn, reason=str(exc))
            writer.write(encode({"type": "error", "reason": str(exc)}))
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            del self._writers[conn]
            self._send(self.core.disconnect(conn))
            try:
                writer.close()
            except Exception:  # noqa: BLE001 - already torn down
                pass


class BrokerThread:
    """Run a :class:`Broker` on a background event loop (tests, embedding)."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, **kwargs) -> None:
        self.broker = Broker(host, port, **kwargs)
        self._loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._run, name="broker", daemon=True)
        self._ready = threading.Event()

    def _run(self) -> None:
        asyncio.set_event_loop(self._loop)
        self._loop.run_until_complete(self.broker.start())
        self._ready.set()
        self._loop.run_forever()
        self._loop.run_until_complete(self.broker.stop())
        self._loop.close()

    def start(self) -> BrokerThread:
        self._thread.start()
        self._ready.wait(10)
        return self

    @property
    def address(self) -> str:
        host, port = self.broker.address
        return f"{host}:{port}"

    @property
    def core(self) -> QueueCore:
        return self.broker.core

    def call(self, fn, *args):
        """Run ``fn(*args)`` on the broker loop and return its result."""
        fut = asyncio.run_coroutine_threadsafe(_call(fn, *args), self._loop)
        return fut.result(10)

    def events(self) -> list[dict]:
        return self.call(lambda: list(self.core.events))

    def stop(self) -> None:
        if self._thread.is_alive():
            self._loop.call_soon_threadsafe(self._loop.stop)
            self._thread.join(10)

    def __enter__(self) -> BrokerThread:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


async def _call(fn, *args):
    return fn(*args)
