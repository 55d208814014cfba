import socket
import threading
import time

import pytest

from polisim.fabric import BrokerClient, BrokerThread, BrokerUnavailable, ConnectionLost
from polisim.fabric.client import Backoff, parse_address
from polisim.fabric.codec import HEADER, FrameDecoder, encode


def client(broker):
    return BrokerClient(broker.address, connect_timeout=5).connect()


def test_loopback(broker):
    with client(broker) as c:
        c.subscribe("t")
        c.publish("t", {"scenario_id": "abc", "n": [1, 2]})
        d = c.next(timeout=5)
        assert d.channel == "t" and d.payload == {"scenario_id": "abc", "n": [1, 2]}
        c.ack(d.delivery_id)
        c.ping()
        assert c.errors == []


def test_next_blocks_until_publish(broker):
    with client(broker) as consumer, client(broker) as producer:
        consumer.subscribe("t")
        consumer.ping()
        threading.Timer(0.3, producer.publish, args=("t", 7)).start()
        t0 = time.monotonic()
        assert consumer.next(timeout=5).payload == 7
        assert time.monotonic() - t0 >= 0.25


def test_next_times_out(broker):
    with client(broker) as c:
        c.subscribe("t")
        with pytest.raises(TimeoutError):
            c.next(timeout=0.2)


def test_competing_consumers_each_message_once(broker):
    n_msgs, n_cons = 100, 4
    got = [[] for _ in range(n_cons)]
    done = threading.Event()

    def consume(i):
        with client(broker) as c:
            c.subscribe("jobs")
            while not done.is_set():
                try:
                    d = c.next(timeout=0.1)
                except TimeoutError:
                    continue
                got[i].append(d.payload)
                c.ack(d.delivery_id)

    threads = [threading.Thread(target=consume, args=(i,)) for i in range(n_cons)]
    for t in threads:
        t.start()
    with client(broker) as p:
        for k in range(n_msgs):
            p.publish("jobs", k)
        p.ping()
    deadline = time.monotonic() + 20
    while sum(map(len, got)) < n_msgs and time.monotonic() < deadline:
        time.sleep(0.05)
    done.set()
    for t in threads:
        t.join(5)
    flat = sorted(x for g in got for x in g)
    assert flat == list(range(n_msgs))
    assert sum(1 for g in got if g) >= 2


def test_bad_ack_keeps_connection(broker):
    with client(broker) as c:
        c.ack(424242)
        c.ping()
        assert len(c.errors) == 1 and "424242" in c.errors[0]
        c.subscribe("t")
        c.publish("t", 1)
        assert c.next(timeout=5).payload == 1


@pytest.mark.parametrize("raw", [
    HEADER.pack(5) + b"hello",
    HEADER.pack(2**31),
    HEADER.pack(12) + b'{"type":"x"}',
])
def test_malformed_frame_closes_only_that_connection(broker, raw):
    with client(broker) as good:
        good.subscribe("t")
        host, port = parse_address(broker.address)
        bad = socket.create_connection((host, port), timeout=5)
        bad.sendall(raw)
        data = b""
        while True:
            chunk = bad.recv(4096)
            if not chunk:
                break
            data += chunk
        bad.close()
        msgs = FrameDecoder().feed(data)
        assert msgs and msgs[0]["type"] == "error"
        good.publish("t", "still here")
        assert good.next(timeout=5).payload == "still here"


def test_disconnect_redelivers(broker):
    first = client(broker)
    first.subscribe("t")
    with client(broker) as p:
        p.publish("t", "job")
        p.ping()
    d1 = first.next(timeout=5)
    with client(broker) as second:
        second.subscribe("t")
        second.ping()
        first.close()
        d2 = second.next(timeout=5)
        assert d2.payload == "job" and d2.delivery_id != d1.delivery_id
        second.ack(d2.delivery_id)
        second.ping()
        assert second.errors == []


def test_visibility_timeout_redelivers():
    with BrokerThread(visibility_timeout=0.3) as b:
        with client(b) as c:
            c.subscribe("t")
            c.publish("t", "slow")
            d1 = c.next(timeout=5)
            d2 = c.next(timeout=5)
            assert d2.payload == "slow" and d2.delivery_id != d1.delivery_id
            c.ack(d1.delivery_id)
            c.ack(d2.delivery_id)
            c.ping()
            assert len(c.errors) == 1


def test_client_reconnects_and_resubscribes():
    b = BrokerThread().start()
    addr = b.address
    c = BrokerClient(addr, connect_timeout=10, backoff=Backoff(0.05, 0.2)).connect()
    c.subscribe("t")
    c.ping()
    b.stop()
    with pytest.raises(ConnectionLost):
        c.next(timeout=2)
    host, port = parse_address(addr)
    b2 = BrokerThread(host, port).start()
    try:
        c.reconnect()
        with client(b2) as p:
            p.publish("t", "after")
        assert c.next(timeout=5).payload == "after"
    finally:
        c.close()
        b2.stop()


def test_unreachable_broker():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    c = BrokerClient(f"127.0.0.1:{port}", connect_timeout=0.5, backoff=Backoff(0.05, 0.1))
    t0 = time.monotonic()
    with pytest.raises(BrokerUnavailable):
        c.connect()
    assert time.monotonic() - t0 < 3


def test_backoff_is_capped_and_jittered():
    delays = [d for _, d in zip(range(30), Backoff(0.2, 10.0).delays())]
    assert all(0 <= d <= 10.0 for d in delays)
    assert max(delays[10:]) > 1.0


def test_encode_helper_frames():
    assert FrameDecoder().feed(encode({"type": "pong"})) == [{"type": "pong"}]
