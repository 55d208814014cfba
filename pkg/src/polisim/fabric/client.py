"""Blocking broker client.

One connection per client; drive it from one thread at a time.  Errors the
broker reports asynchronously (for example a stale ``ack``) are collected in
:attr:`BrokerClient.errors`; :meth:`BrokerClient.ping` is a round-trip
barrier after which every earlier error has been received.
"""

from __future__ import annotations

import logging
import random
import socket
import time
from collections import deque
from typing import Any, NamedTuple

from .codec import FrameDecoder, encode

__all__ = ["Backoff", "BrokerClient", "BrokerUnavailable", "ConnectionLost", "Delivery", "parse_address"]

log = logging.getLogger(__name__)


class ConnectionLost(ConnectionError):
    """The broker connection dropped; call :meth:`BrokerClient.reconnect`."""


class BrokerUnavailable(ConnectionError):
    """No connection could be made within the retry window."""


class Delivery(NamedTuple):
    delivery_id: int
    channel: str
    payload: Any


def parse_address(address: str | tuple[str, int]) -> tuple[str, int]:
    if isinstance(address, tuple):
        return address
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {address!r}")
    return host, int(port)


class Backoff:
    """Jittered exponential backoff: ``min(cap, base * 2**i) * U(0.5, 1)``."""

    def __init__(self, base: float = 0.2, cap: float = 10.0, rng: random.Random | None = None) -> None:
        self.base = base
        self.cap = cap
        self.rng = rng or random.Random()

    def delays(self):
        i = 0
        while True:
            yield min(self.cap, self.base * 2 ** i) * self.rng.uniform(0.5, 1.0)
            i += 1


class BrokerClient:
    def __init__(self, address: str | tuple[str, int], *, connect_timeout: float = 60.0,
                 backoff: Backoff | None = None) -> None:
        self.address = parse_address(address)
        self.connect_timeout = connect_timeout
        self.backoff = backoff or Backoff()
        self.errors: list[str] = []
        self._sock: socket.socket | None = None
        self._decoder = FrameDecoder()
        self._deliveries: deque[Delivery] = deque()
        self._pongs = 0
        self._subscriptions: list[str] = []

    # -- connection management

    def connect(self, cancel=None) -> BrokerClient:
        """Connect, retrying with backoff for up to ``connect_timeout`` seconds.

        ``cancel`` (a ``threading.Event``) aborts the retry loop early.
        """
        deadline = time.monotonic() + self.connect_timeout
        last: Exception | None = None
        for delay in self.backoff.delays():
            try:
                sock = socket.create_connection(self.address, timeout=5.0)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                sock.settimeout(None)
                self._sock = sock
                self._decoder = FrameDecoder()
                # anything received on the old connection has been requeued
                self._deliveries.clear()
                for channel in self._subscriptions:
                    self._send({"type": "subscribe", "channel": channel})
                return self
            except OSError as exc:
                last = exc
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            log.debug("broker %s unreachable (%s); retrying in %.2fs", self.address, last, delay)
            if cancel is not None:
                if cancel.wait(min(delay, remaining)):
                    break
            else:
                time.sleep(min(delay, remaining))
        raise BrokerUnavailable(f"could not reach broker at {self.address[0]}:{self.address[1]}: {last}")

    def reconnect(self, cancel=None) -> BrokerClient:
        self._drop()
        return self.connect(cancel)

    def close(self) -> None:
        self._drop()

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def __enter__(self) -> BrokerClient:
        if self._sock is None:
            self.connect()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def connected(self) -> bool:
        return self._sock is not None

    # -- io

    def _send(self, msg: dict) -> None:
        if self._sock is None:
            raise ConnectionLost("not connected")
        try:
            self._sock.sendall(encode(msg))
        except OSError as exc:
            self._drop()
            raise ConnectionLost(str(exc)) from exc

    def _pump(self, timeout: float | None) -> bool:
        """Read once and route frames; returns False on timeout."""
        if self._sock is None:
            raise ConnectionLost("not connected")
        self._sock.settimeout(timeout)
        try:
            data = self._sock.recv(65536)
        except (socket.timeout, BlockingIOError):
            return False
        except OSError as exc:
            self._drop()
            raise ConnectionLost(str(exc)) from exc
        if not data:
            self._drop()
            raise ConnectionLost("broker closed the connection")
        for msg in self._decoder.feed(data):
            kind = msg["type"]
            if kind == "deliver":
                self._deliveries.append(Delivery(msg["delivery_id"], msg["channel"], msg["payload"]))
            elif kind == "pong":
                self._pongs += 1
            elif kind == "error":
                log.warning("broker error: %s", msg["reason"])
                self.errors.append(msg["reason"])
        return True

    # -- primitives

    def publish(self, channel: str, payload: Any) -> None:
        self._send({"type": "publish", "channel": channel, "payload": payload})

    def subscribe(self, channel: str) -> None:
        if channel not in self._subscriptions:
            self._subscriptions.append(channel)
        self._send({"type": "subscribe", "channel": channel})

    def ack(self, delivery_id: int) -> None:
        self._send({"type": "ack", "delivery_id": delivery_id})

    def next(self, timeout: float | None = None) -> Delivery:
        """Block until a delivery arrives.  Raises ``TimeoutError`` after ``timeout`` s."""
        deadline = None if timeout is None else time.monotonic() + timeout
        while not self._deliveries:
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                raise TimeoutError("no delivery within timeout")
            self._pump(remaining)
        return self._deliveries.popleft()

    def ping(self, timeout: float = 10.0) -> None:
        """Round trip to the broker; raises ``TimeoutError`` if no pong."""
        target = self._pongs + 1
        self._send({"type": "ping"})
        deadline = time.monotonic() + timeout
        while self._pongs < target:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("no pong within timeout")
            self._pump(remaining)
