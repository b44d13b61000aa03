"""Nearest-cache selection and failover reads.

Caches are ordered by great-circle distance from the client's declared
position (ties by node id) and tried in order. An attempt fails
``unavailable`` on connection failure or an ERR 503, and ``slow`` when the
complete response does not arrive within the configured deadline. An ERR 404
aborts the whole chain: the federation is authoritative, so asking another
cache cannot help.

Positions are declared per node (geo table file) rather than derived from IP
geolocation; the selection algorithm itself is unchanged by that swap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .cache_engine import NotFound
from .core import FileId, GeoPoint, ValidationError, validate_node_id
from .protocol import NOT_FOUND, UNAVAILABLE, parse_response, read_request
from .simnet import TransportError

EARTH_RADIUS_KM = 6371.0
DEFAULT_DEADLINE_MS = 5000.0


class AllCachesFailed(Exception):
    def __init__(self, attempts: list["Attempt"]):
        super().__init__(
            "all caches failed: "
            + ", ".join(f"{a.node}={a.result}" for a in attempts)
        )
        self.attempts = attempts


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in kilometers (Earth radius 6371.0 km)."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


@dataclass(frozen=True)
class ClientConfig:
    caches: tuple[tuple[str, GeoPoint], ...]
    position: GeoPoint
    deadline_ms: float = DEFAULT_DEADLINE_MS
    max_attempts: int | None = None  # None: as many as there are caches

    def __post_init__(self) -> None:
        if not self.caches:
            raise ValidationError("client needs at least one cache")
        if self.deadline_ms <= 0:
            raise ValidationError("deadline_ms must be > 0")
        if self.max_attempts is not None and self.max_attempts < 1:
            raise ValidationError("max_attempts must be >= 1")


@dataclass(frozen=True, slots=True)
class Attempt:
    node: str
    result: str  # "ok" | "unavailable" | "slow"


@dataclass(frozen=True)
class ReadReport:
    served_by: str
    attempts: tuple[Attempt, ...]
    data: bytes
    completed_at_ms: float


def order_caches(cfg: ClientConfig) -> list[str]:
    """Cache ids by ascending distance from cfg.position, ties by id."""
    return [
        node
        for node, _ in sorted(
            cfg.caches, key=lambda item: (haversine_km(cfg.position, item[1]), item[0])
        )
    ]


def read_with_failover(
    cfg: ClientConfig,
    file: FileId,
    offset: int,
    length: int,
    transport,
    *,
    client_id: str,
    at_ms: float = 0.0,
) -> ReadReport:
    """Try caches nearest-first until one serves the read.

    A failed attempt advances the local time cursor: an unavailable cache
    costs the failure-detection time reported by the transport, a slow one
    costs the full deadline (the client stops waiting and moves on).
    """
    order = order_caches(cfg)
    if cfg.max_attempts is not None:
        order = order[: cfg.max_attempts]
    attempts: list[Attempt] = []
    cursor = at_ms
    request = read_request(file.path, offset, length)
    for node in order:
        started = cursor
        try:
            raw, completed = transport.request(
                client_id, node, request, at=started, timeout_ms=cfg.deadline_ms
            )
        except TransportError as exc:
            if exc.kind == "timeout":
                attempts.append(Attempt(node, "slow"))
                cursor = started + cfg.deadline_ms
            else:
                attempts.append(Attempt(node, "unavailable"))
                cursor = max(started, exc.at_ms)
            continue
        response = parse_response(raw)
        if response.kind == "err":
            if response.code == NOT_FOUND:
                raise NotFound(f"{file}: {response.message}")
            # 503 and any other server-side failure: try the next cache
            attempts.append(Attempt(node, "unavailable"))
            cursor = completed
            continue
        if completed - started > cfg.deadline_ms:
            attempts.append(Attempt(node, "slow"))
            cursor = started + cfg.deadline_ms
            continue
        attempts.append(Attempt(node, "ok"))
        return ReadReport(node, tuple(attempts), response.payload, completed)
    raise AllCachesFailed(attempts)


def load_geo_table(text: str) -> dict[str, GeoPoint]:
    """Parse a geo table: one `<node_id>\\t<lat>\\t<lon>` row per line."""
    table: dict[str, GeoPoint] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValidationError(f"geo table line {lineno}: expected 3 tab-separated fields")
        node = validate_node_id(fields[0], f"geo table line {lineno}")
        try:
            lat, lon = float(fields[1]), float(fields[2])
        except ValueError:
            raise ValidationError(f"geo table line {lineno}: bad coordinates") from None
        table[node] = GeoPoint(lat, lon)
    return table


def format_geo_table(table: dict[str, GeoPoint]) -> str:
    return "".join(f"{node}\t{p.lat}\t{p.lon}\n" for node, p in sorted(table.items()))
