"""Framed-JSON work-queue fabric: codec, broker, and client."""

from .broker import Broker, BrokerThread, QueueCore
from .client import Backoff, BrokerClient, BrokerUnavailable, ConnectionLost, Delivery, parse_address
from .codec import MAX_FRAME, FrameDecoder, ProtocolError, encode

TASKS = "tasks"
RESULTS = "results"

__all__ = [
    "MAX_FRAME",
    "RESULTS",
    "TASKS",
    "Backoff",
    "Broker",
    "BrokerClient",
    "BrokerThread",
    "BrokerUnavailable",
    "ConnectionLost",
    "Delivery",
    "FrameDecoder",
    "ProtocolError",
    "QueueCore",
    "encode",
    "parse_address",
]
