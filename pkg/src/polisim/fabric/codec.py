"""Wire format: 4-byte big-endian length, then a UTF-8 JSON object body.

Every body carries a string ``type``.  Required fields per type:

=========  ==========================================
subscribe  channel
publish    channel, payload
deliver    channel, delivery_id, payload
ack        delivery_id
ping       (none)
pong       (none)
error      reason
=========  ==========================================

Unknown fields are ignored on receipt.
"""

from __future__ import annotations

import json
import struct
from typing import Any

__all__ = [
    "HEADER",
    "MAX_FRAME",
    "MESSAGE_TYPES",
    "FrameDecoder",
    "ProtocolError",
    "decode_body",
    "encode",
    "validate",
]

HEADER = struct.Struct(">I")
MAX_FRAME = 16 * 1024 * 1024

REQUIRED = {
    "subscribe": ("channel",),
    "publish": ("channel", "payload"),
    "deliver": ("channel", "delivery_id", "payload"),
    "ack": ("delivery_id",),
    "ping": (),
    "pong": (),
    "error": ("reason",),
}
MESSAGE_TYPES = tuple(REQUIRED)
U64_MAX = (1 << 64) - 1


class ProtocolError(ValueError):
    """Malformed frame or message."""


def validate(msg: Any) -> dict:
    if not isinstance(msg, dict):
        raise ProtocolError("message body must be a JSON object")
    kind = msg.get("type")
    if not isinstance(kind, str):
        raise ProtocolError("message lacks a string 'type' field")
    if kind not in REQUIRED:
        raise ProtocolError(f"unknown message type {kind!r}")
    for name in REQUIRED[kind]:
        if name not in msg:
            raise ProtocolError(f"{kind} message lacks {name!r}")
    if "channel" in REQUIRED[kind] and not isinstance(msg["channel"], str):
        raise ProtocolError("channel must be a string")
    if "delivery_id" in REQUIRED[kind]:
        did = msg["delivery_id"]
        if isinstance(did, bool) or not isinstance(did, int) or not 0 <= did <= U64_MAX:
            raise ProtocolError("delivery_id must be an unsigned 64-bit integer")
    if kind == "error" and not isinstance(msg["reason"], str):
        raise ProtocolError("reason must be a string")
    return msg


def encode(msg: dict) -> bytes:
    """Frame one message.  Raises :class:`ProtocolError` if invalid or oversize."""
    validate(msg)
    body = json.dumps(msg, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise ProtocolError(f"frame of {len(body)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(body)) + body


def decode_body(body: bytes) -> dict:
    try:
        msg = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"undecodable body: {exc}") from None
    return validate(msg)


def check_length(length: int) -> None:
    if length > MAX_FRAME:
        raise ProtocolError(f"frame length {length} exceeds {MAX_FRAME}")


class FrameDecoder:
    """Incremental decoder: feed bytes, pull complete messages."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[dict]:
        self._buf += data
        out = []
        while True:
            if len(self._buf) < HEADER.size:
                return out
            (length,) = HEADER.unpack_from(self._buf)
            check_length(length)
            end = HEADER.size + length
            if len(self._buf) < end:
                return out
            body = bytes(self._buf[HEADER.size:end])
            del self._buf[:end]
            out.append(decode_body(body))

    @property
    def pending(self) -> int:
        return len(self._buf)
