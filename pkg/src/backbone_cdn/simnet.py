"""Deterministic simulated transport plus a real-socket twin.

A request/response exchange is modeled as one atomic unit with a closed-form
completion time::

    completed_at = at + 2 * latency(from, to) * slow_factor(to)
                      + len(response) / bandwidth(from, to)
                      + handler service time

Links are uncontended; there is no queueing or packet loss. If the target is
down for any instant of the exchange the whole exchange fails with
``TransportError("unavailable")``. Handlers are synchronous and may issue
nested requests, whose cost lands in the service-time term.

``SocketTransport`` implements the identical request interface over TCP with
wall-clock deadlines, so services run unmodified in either world.
"""

from __future__ import annotations

import heapq
import json
import math
import socket
import time
from dataclasses import dataclass, field

from .core import ParseError, ValidationError, _reject_unknown, _require
from .protocol import recv_response


class TransportError(Exception):
    """kind is one of 'unavailable', 'unknown_node', 'timeout'."""

    def __init__(self, kind: str, detail: str = "", at_ms: float = 0.0):
        super().__init__(f"{kind}: {detail}" if detail else kind)
        self.kind = kind
        self.at_ms = at_ms


@dataclass(frozen=True, slots=True)
class FaultWindow:
    node: str
    from_ms: float
    to_ms: float
    kind: str  # "down" | "slow"
    factor: float = 1.0

    def __post_init__(self) -> None:
        if self.from_ms > self.to_ms:
            raise ValidationError(f"fault window for {self.node!r}: from_ms > to_ms")
        if self.kind not in ("down", "slow"):
            raise ValidationError(f"fault kind {self.kind!r} must be 'down' or 'slow'")
        if self.kind == "slow" and self.factor < 1.0:
            raise ValidationError(f"slow factor {self.factor} must be >= 1")


@dataclass(frozen=True, slots=True)
class LinkSpec:
    latency_ms: float | None = None
    bandwidth: float | None = None  # bytes per ms


@dataclass(frozen=True)
class SimConfig:
    default_latency_ms: float = 0.0
    default_bandwidth: float = math.inf  # bytes per ms
    links: dict[tuple[str, str], LinkSpec] = field(default_factory=dict)
    faults: tuple[FaultWindow, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.default_latency_ms < 0:
            raise ValidationError("default latency must be >= 0")
        if self.default_bandwidth <= 0:
            raise ValidationError("default bandwidth must be > 0")
        for key, link in self.links.items():
            if link.latency_ms is not None and link.latency_ms < 0:
                raise ValidationError(f"link {key}: latency must be >= 0")
            if link.bandwidth is not None and link.bandwidth <= 0:
                raise ValidationError(f"link {key}: bandwidth must be > 0")

    def latency(self, from_node: str, to_node: str) -> float:
        link = self.links.get((from_node, to_node))
        if link is not None and link.latency_ms is not None:
            return link.latency_ms
        return self.default_latency_ms

    def bandwidth(self, from_node: str, to_node: str) -> float:
        link = self.links.get((from_node, to_node))
        if link is not None and link.bandwidth is not None:
            return link.bandwidth
        return self.default_bandwidth


def parse_sim_config(text: str) -> SimConfig:
    """Parse a simulated-network document (UTF-8 JSON)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("sim config: top-level value must be an object")
    _reject_unknown(
        "sim config",
        doc,
        {"default_latency_ms", "default_bandwidth_bytes_per_ms", "links", "faults", "seed"},
    )
    kwargs: dict = {}
    if "default_latency_ms" in doc:
        kwargs["default_latency_ms"] = float(
            _require(doc, "default_latency_ms", (int, float), "sim config")
        )
    if "default_bandwidth_bytes_per_ms" in doc:
        kwargs["default_bandwidth"] = float(
            _require(doc, "default_bandwidth_bytes_per_ms", (int, float), "sim config")
        )
    if "seed" in doc:
        kwargs["seed"] = _require(doc, "seed", int, "sim config")
    links: dict[tuple[str, str], LinkSpec] = {}
    for i, obj in enumerate(doc.get("links", [])):
        context = f"links[{i}]"
        if not isinstance(obj, dict):
            raise ParseError(f"{context}: must be an object")
        _reject_unknown(context, obj, {"from", "to", "latency_ms", "bandwidth"})
        key = (_require(obj, "from", str, context), _require(obj, "to", str, context))
        latency = obj.get("latency_ms")
        bandwidth = obj.get("bandwidth")
        links[key] = LinkSpec(
            None if latency is None else float(latency),
            None if bandwidth is None else float(bandwidth),
        )
    faults = []
    for i, obj in enumerate(doc.get("faults", [])):
        context = f"faults[{i}]"
        if not isinstance(obj, dict):
            raise ParseError(f"{context}: must be an object")
        _reject_unknown(context, obj, {"node", "from_ms", "to_ms", "kind", "factor"})
        faults.append(
            FaultWindow(
                _require(obj, "node", str, context),
                float(_require(obj, "from_ms", (int, float), context)),
                float(_require(obj, "to_ms", (int, float), context)),
                _require(obj, "kind", str, context),
                float(obj.get("factor", 1.0)),
            )
        )
    return SimConfig(links=links, faults=tuple(faults), **kwargs)


class SimTransport:
    """Synchronous simulated exchanges between registered handlers.

    Handlers are objects with ``handle(payload, now_ms, peer) -> (response,
    done_ms)``; done_ms >= now_ms accounts for nested sub-requests. The
    transport also keeps per-node byte counters so conservation (delivered =
    sent - failed) is checkable.
    """

    def __init__(self, config: SimConfig, handlers: dict[str, object] | None = None):
        self.config = config
        self.handlers: dict[str, object] = handlers or {}
        self.bytes_sent_to: dict[str, int] = {}
        self.bytes_delivered_to: dict[str, int] = {}
        self.bytes_failed_to: dict[str, int] = {}

    def add_handler(self, node_id: str, handler: object) -> None:
        self.handlers[node_id] = handler

    def _slow_factor(self, node: str, t: float) -> float:
        factor = 1.0
        for w in self.config.faults:
            if w.kind == "slow" and w.node == node and w.from_ms <= t < w.to_ms:
                factor = max(factor, w.factor)
        return factor

    def _down_during(self, node: str, t0: float, t1: float) -> bool:
        # overlap of [t0, t1] with any half-open down window [from, to)
        for w in self.config.faults:
            if w.kind == "down" and w.node == node and t0 < w.to_ms and t1 >= w.from_ms:
                if w.from_ms < w.to_ms:
                    return True
        return False

    def request(
        self,
        from_node: str,
        to_node: str,
        payload: bytes,
        at: float,
        timeout_ms: float | None = None,
    ) -> tuple[bytes, float]:
        if to_node not in self.handlers:
            raise TransportError("unknown_node", to_node, at_ms=at)
        leg = self.config.latency(from_node, to_node) * self._slow_factor(to_node, at)
        arrive = at + leg
        if self._down_during(to_node, at, arrive):
            raise TransportError("unavailable", f"{to_node} down", at_ms=at + 2 * leg)
        response, done = self.handlers[to_node].handle(payload, arrive, from_node)
        completed = done + leg + len(response) / self.config.bandwidth(from_node, to_node)
        self.bytes_sent_to[from_node] = self.bytes_sent_to.get(from_node, 0) + len(response)
        if self._down_during(to_node, arrive, completed):
            self.bytes_failed_to[from_node] = self.bytes_failed_to.get(from_node, 0) + len(
                response
            )
            raise TransportError("unavailable", f"{to_node} down", at_ms=completed)
        self.bytes_delivered_to[from_node] = self.bytes_delivered_to.get(from_node, 0) + len(
            response
        )
        return response, completed


class Simulator:
    """Single-threaded event queue over a monotone simulated clock.

    Events fire in (time, insertion order); identical configurations and
    workloads therefore produce bit-identical event sequences.
    """

    def __init__(self) -> None:
        self.now_ms: float = 0.0
        self._heap: list[tuple[float, int, object, tuple]] = []
        self._seq = 0

    def schedule(self, t_ms: float, fn, *args) -> None:
        if t_ms < 0:
            raise ValueError("cannot schedule before t=0")
        heapq.heappush(self._heap, (float(t_ms), self._seq, fn, args))
        self._seq += 1

    def run_until(self, t_ms: float | None = None) -> int:
        """Process queued events up to and including ``t_ms`` (all if None)."""
        processed = 0
        while self._heap and (t_ms is None or self._heap[0][0] <= t_ms):
            t, _, fn, args = heapq.heappop(self._heap)
            assert t >= self.now_ms, "event queue went backwards"
            self.now_ms = t
            fn(*args)
            processed += 1
        if t_ms is not None and t_ms > self.now_ms:
            self.now_ms = t_ms
        return processed

    def pending(self) -> int:
        return len(self._heap)


def wall_ms() -> float:
    return time.monotonic() * 1000.0


class SocketTransport:
    """The same request interface over TCP; one request per connection."""

    def __init__(self, addresses: dict[str, tuple[str, int]]):
        self.addresses = dict(addresses)

    def request(
        self,
        from_node: str,
        to_node: str,
        payload: bytes,
        at: float | None = None,
        timeout_ms: float | None = None,
    ) -> tuple[bytes, float]:
        if to_node not in self.addresses:
            raise TransportError("unknown_node", to_node, at_ms=wall_ms())
        timeout = None if timeout_ms is None else timeout_ms / 1000.0
        try:
            with socket.create_connection(self.addresses[to_node], timeout=timeout) as sock:
                sock.sendall(payload)
                with sock.makefile("rb") as rfile:
                    response = recv_response(rfile)
        except socket.timeout:
            raise TransportError("timeout", to_node, at_ms=wall_ms()) from None
        except OSError as exc:
            raise TransportError("unavailable", f"{to_node}: {exc}", at_ms=wall_ms()) from None
        return response, wall_ms()
