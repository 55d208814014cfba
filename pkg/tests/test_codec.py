import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polisim.fabric.codec import HEADER, MAX_FRAME, FrameDecoder, ProtocolError, encode, validate

json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**63), 2**63) | st.text(max_size=20)
    | st.floats(allow_nan=False, allow_infinity=False),
    lambda children: st.lists(children, max_size=4) | st.dictionaries(st.text(max_size=8), children, max_size=4),
    max_leaves=12,
)
channels = st.text(max_size=16)
ids = st.integers(0, 2**64 - 1)

messages = st.one_of(
    st.builds(lambda c: {"type": "subscribe", "channel": c}, channels),
    st.builds(lambda c, p: {"type": "publish", "channel": c, "payload": p}, channels, json_values),
    st.builds(lambda c, d, p: {"type": "deliver", "channel": c, "delivery_id": d, "payload": p},
              channels, ids, json_values),
    st.builds(lambda d: {"type": "ack", "delivery_id": d}, ids),
    st.just({"type": "ping"}),
    st.just({"type": "pong"}),
    st.builds(lambda r: {"type": "error", "reason": r}, st.text(max_size=40)),
)


@settings(max_examples=500)
@given(st.lists(messages, min_size=1, max_size=5), st.integers(1, 64))
def test_round_trip_any_chunking(msgs, chunk):
    wire = b"".join(encode(m) for m in msgs)
    dec = FrameDecoder()
    got = []
    for i in range(0, len(wire), chunk):
        got += dec.feed(wire[i:i + chunk])
    assert got == msgs
    assert dec.pending == 0


def test_header_is_big_endian_length():
    frame = encode({"type": "ping"})
    assert frame[:4] == len(frame[4:]).to_bytes(4, "big")
    assert json.loads(frame[4:]) == {"type": "ping"}


def test_oversize_encode_rejected():
    with pytest.raises(ProtocolError):
        encode({"type": "publish", "channel": "x", "payload": "a" * MAX_FRAME})


def test_oversize_header_rejected_before_body():
    with pytest.raises(ProtocolError):
        FrameDecoder().feed(HEADER.pack(MAX_FRAME + 1))


def test_exactly_max_frame_header_accepted():
    assert FrameDecoder().feed(HEADER.pack(MAX_FRAME)) == []


@pytest.mark.parametrize("body", [
    b"\xff\xfe", b"not json", b"[1,2]", b'{"no_type":1}', b'{"type":"shout"}',
    b'{"type":"ack"}', b'{"type":"ack","delivery_id":-1}', b'{"type":"ack","delivery_id":true}',
    b'{"type":"ack","delivery_id":18446744073709551616}', b'{"type":"subscribe","channel":3}',
    b'{"type":"publish","channel":"t"}', b'{"type":"error","reason":null}',
])
def test_malformed_bodies(body):
    with pytest.raises(ProtocolError):
        FrameDecoder().feed(HEADER.pack(len(body)) + body)


def test_unknown_fields_ignored():
    msg = {"type": "ack", "delivery_id": 3, "extra": [1]}
    assert validate(msg) is msg


def test_nan_refused():
    with pytest.raises(ValueError):
        encode({"type": "publish", "channel": "x", "payload": float("nan")})
