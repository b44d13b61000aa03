import json

import pytest

from backbone_cdn.core import ParseError, ValidationError
from backbone_cdn.simnet import (
    FaultWindow,
    LinkSpec,
    SimConfig,
    Simulator,
    SimTransport,
    TransportError,
    parse_sim_config,
)


class Echo:
    """Leaf handler: replies with a fixed payload, zero service time."""

    def __init__(self, payload: bytes = b"pong"):
        self.payload = payload
        self.calls = 0

    def handle(self, payload, now_ms, peer):
        self.calls += 1
        return self.payload, now_ms


class Relay:
    """Nested handler: forwards to another node, adding its own exchange."""

    def __init__(self, transport, node_id, downstream):
        self.transport = transport
        self.node_id = node_id
        self.downstream = downstream

    def handle(self, payload, now_ms, peer):
        response, done = self.transport.request(self.node_id, self.downstream, payload, at=now_ms)
        return response, done


def transport_with(config: SimConfig, **handlers) -> SimTransport:
    return SimTransport(config, dict(handlers))


class TestRequestTiming:
    def test_pure_latency_round_trip(self):
        cfg = SimConfig(default_latency_ms=10.0)
        t = transport_with(cfg, b=Echo(b""))
        _, completed = t.request("a", "b", b"x", at=100.0)
        assert completed == pytest.approx(120.0)

    def test_slow_factor_and_bandwidth(self):
        # latency 10, slow factor 3, 1000 bytes at 1 byte/ms: 60 + 1000
        cfg = SimConfig(
            default_latency_ms=10.0,
            default_bandwidth=1.0,
            faults=(FaultWindow("b", 0.0, 1e9, "slow", 3.0),),
        )
        t = transport_with(cfg, b=Echo(b"z" * 1000))
        _, completed = t.request("a", "b", b"x", at=0.0)
        assert completed == pytest.approx(1060.0)

    def test_per_link_overrides(self):
        cfg = SimConfig(
            default_latency_ms=50.0,
            links={("a", "b"): LinkSpec(latency_ms=1.0)},
        )
        t = transport_with(cfg, b=Echo(b""), c=Echo(b""))
        _, fast = t.request("a", "b", b"x", at=0.0)
        _, slow = t.request("a", "c", b"x", at=0.0)
        assert fast == pytest.approx(2.0)
        assert slow == pytest.approx(100.0)

    def test_nested_exchange_adds_service_time(self):
        cfg = SimConfig(default_latency_ms=5.0)
        t = SimTransport(cfg)
        t.add_handler("origin", Echo(b"data"))
        t.add_handler("cache", Relay(t, "cache", "origin"))
        _, completed = t.request("client", "cache", b"req", at=0.0)
        # client->cache leg 5, cache->origin round trip 10, cache->client leg 5
        assert completed == pytest.approx(20.0)

    def test_down_window_unavailable(self):
        cfg = SimConfig(
            default_latency_ms=10.0, faults=(FaultWindow("b", 90.0, 200.0, "down"),)
        )
        t = transport_with(cfg, b=Echo())
        with pytest.raises(TransportError) as exc_info:
            t.request("a", "b", b"x", at=100.0)
        assert exc_info.value.kind == "unavailable"
        # outside the window the exchange works
        _, completed = t.request("a", "b", b"x", at=300.0)
        assert completed == pytest.approx(320.0)

    def test_down_window_is_half_open(self):
        cfg = SimConfig(faults=(FaultWindow("b", 100.0, 200.0, "down"),))
        t = transport_with(cfg, b=Echo(b""))
        t.request("a", "b", b"x", at=200.0)  # at the end boundary: up
        with pytest.raises(TransportError):
            t.request("a", "b", b"x", at=100.0)  # at the start boundary: down

    def test_unknown_node(self):
        t = transport_with(SimConfig(), b=Echo())
        with pytest.raises(TransportError) as exc_info:
            t.request("a", "zz", b"x", at=0.0)
        assert exc_info.value.kind == "unknown_node"

    def test_conservation_counters(self):
        cfg = SimConfig(faults=(FaultWindow("b", 50.0, 60.0, "down"),))
        echo = Echo(b"12345678")
        t = transport_with(cfg, b=echo)
        t.request("a", "b", b"x", at=0.0)
        t.request("a", "b", b"x", at=10.0)
        with pytest.raises(TransportError):
            t.request("a", "b", b"x", at=55.0)
        sent = t.bytes_sent_to["a"]
        delivered = t.bytes_delivered_to["a"]
        failed = t.bytes_failed_to.get("a", 0)
        assert delivered == sent - failed
        assert delivered == 16

    def test_deterministic_repeat(self):
        cfg = SimConfig(default_latency_ms=3.0, default_bandwidth=2.0)
        results = []
        for _ in range(2):
            t = transport_with(cfg, b=Echo(b"payload"))
            results.append(t.request("a", "b", b"x", at=7.0))
        assert results[0] == results[1]


class TestSimulator:
    def test_empty_run_leaves_clock(self):
        sim = Simulator()
        assert sim.run_until(None) == 0
        assert sim.now_ms == 0.0

    def test_same_timestamp_insertion_order(self):
        sim = Simulator()
        out = []
        sim.schedule(5.0, out.append, "first")
        sim.schedule(5.0, out.append, "second")
        sim.schedule(1.0, out.append, "early")
        sim.run_until(None)
        assert out == ["early", "first", "second"]

    def test_run_until_time_bound(self):
        sim = Simulator()
        out = []
        for t in (1.0, 2.0, 3.0):
            sim.schedule(t, out.append, t)
        assert sim.run_until(2.0) == 2
        assert out == [1.0, 2.0]
        assert sim.now_ms == 2.0
        assert sim.pending() == 1

    def test_clock_monotone_through_nested_schedules(self):
        sim = Simulator()
        seen = []

        def fire(tag):
            seen.append((sim.now_ms, tag))
            if tag == "a":
                sim.schedule(sim.now_ms, fire, "a-child")

        sim.schedule(2.0, fire, "a")
        sim.schedule(4.0, fire, "b")
        sim.run_until(None)
        assert seen == [(2.0, "a"), (2.0, "a-child"), (4.0, "b")]


class TestSimConfigParsing:
    def test_full_document(self):
        doc = {
            "default_latency_ms": 5,
            "default_bandwidth_bytes_per_ms": 100,
            "links": [{"from": "a", "to": "b", "latency_ms": 1, "bandwidth": 10}],
            "faults": [
                {"node": "b", "from_ms": 0, "to_ms": 50, "kind": "down"},
                {"node": "c", "from_ms": 0, "to_ms": 50, "kind": "slow", "factor": 4},
            ],
            "seed": 99,
        }
        cfg = parse_sim_config(json.dumps(doc))
        assert cfg.latency("a", "b") == 1.0
        assert cfg.latency("b", "a") == 5.0
        assert cfg.bandwidth("a", "b") == 10.0
        assert cfg.faults[1].factor == 4.0
        assert cfg.seed == 99

    def test_defaults(self):
        cfg = parse_sim_config("{}")
        assert cfg.latency("x", "y") == 0.0
        assert cfg.bandwidth("x", "y") > 1e12

    def test_unknown_field(self):
        with pytest.raises(ParseError):
            parse_sim_config('{"jitter": 1}')

    def test_invalid_fault(self):
        with pytest.raises(ValidationError):
            parse_sim_config(
                '{"faults": [{"node": "b", "from_ms": 10, "to_ms": 5, "kind": "down"}]}'
            )
        with pytest.raises(ValidationError):
            parse_sim_config(
                '{"faults": [{"node": "b", "from_ms": 0, "to_ms": 5, "kind": "slow", "factor": 0.5}]}'
            )
