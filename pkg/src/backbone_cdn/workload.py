"""Synthetic workload generation and end-to-end trace replay.

Generation is driven by a SplitMix64 sequence (documented below) so a
workload spec plus client list maps to exactly one trace, bit-for-bit, on any
platform. Replay wires a trace through the full stack — federation, caches,
geo-ordered clients, simulated transport — and feeds every event into the
accounting log.

Event timestamps are drawn uniformly over the duration; arrival-process
realism is irrelevant to byte accounting. Failed events (every cache
unavailable, or the file missing from the federation) are logged with zero
bytes so they cannot disturb the byte aggregates.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field

from . import accounting, protocol
from .accounting import AccessLog, AccessRecord, NamespaceReport, failed_record
from .cache_engine import CacheEngine, NotFound
from .client import (
    AllCachesFailed,
    ClientConfig,
    ReadReport,
    read_with_failover,
)
from .core import (
    DeploymentConfig,
    FileId,
    FileMeta,
    ParseError,
    ValidationError,
    fnv1a_64,
    validate_node_id,
    _reject_unknown,
    _require,
)
from .federation import FederationIndex
from .services import CacheServer, OriginServer, RedirectorServer
from .simnet import SimConfig, Simulator, SimTransport

_MASK64 = (1 << 64) - 1


class InvalidSpec(ValueError):
    pass


class SplitMix64:
    """SplitMix64 sequence (Steele/Lea/Flood): state advances by the 64-bit
    golden-gamma 0x9E3779B97F4A7C15; output mixes with the murmur-style
    constants 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB. Bounded draws use
    the multiply-shift reduction (x * n) >> 64."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def in_range(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return lo + self.below(hi - lo + 1)

    def unit(self) -> float:
        """Uniform float in [0, 1)."""
        return self.next_u64() / float(1 << 64)


# ---------------------------------------------------------------------------
# workload specification


@dataclass(frozen=True)
class SizeDistribution:
    kind: str  # "uniform" | "fixed" | "zipf_sizes"
    min_bytes: int = 0
    max_bytes: int = 0
    fixed_bytes: int = 0
    exponent: float = 0.0

    ZIPF_BUCKETS = 32  # zipf_sizes draws from this many geometric size steps

    def __post_init__(self) -> None:
        if self.kind == "fixed":
            if self.fixed_bytes < 0:
                raise InvalidSpec("size_distribution.fixed: size must be >= 0")
        elif self.kind in ("uniform", "zipf_sizes"):
            if not 0 <= self.min_bytes <= self.max_bytes:
                raise InvalidSpec(f"size_distribution.{self.kind}: need 0 <= min <= max")
            if self.kind == "zipf_sizes":
                if self.exponent <= 0:
                    raise InvalidSpec("size_distribution.zipf_sizes: s must be > 0")
                if self.min_bytes < 1:
                    raise InvalidSpec("size_distribution.zipf_sizes: min must be >= 1")
        else:
            raise InvalidSpec(f"size_distribution: unknown kind {self.kind!r}")

    def draw(self, rng: SplitMix64) -> int:
        if self.kind == "fixed":
            return self.fixed_bytes
        if self.kind == "uniform":
            return rng.in_range(self.min_bytes, self.max_bytes)
        # zipf_sizes: geometric steps from min to max, smaller sizes more likely
        steps = self.ZIPF_BUCKETS
        ratio = self.max_bytes / self.min_bytes
        candidates = [
            round(self.min_bytes * ratio ** (k / (steps - 1))) for k in range(steps)
        ]
        weights = _zipf_cumulative(steps, self.exponent)
        return candidates[_draw_rank(rng, weights)]


@dataclass(frozen=True)
class Popularity:
    kind: str  # "uniform" | "zipf"
    exponent: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "zipf":
            if self.exponent <= 0:
                raise InvalidSpec("popularity.zipf: s must be > 0")
        elif self.kind != "uniform":
            raise InvalidSpec(f"popularity: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class ReadStyle:
    kind: str  # "full_file" | "random_range"
    min_len: int = 0
    max_len: int = 0

    def __post_init__(self) -> None:
        if self.kind == "random_range":
            if not 0 <= self.min_len <= self.max_len:
                raise InvalidSpec("read_style.random_range: need 0 <= min_len <= max_len")
        elif self.kind != "full_file":
            raise InvalidSpec(f"read_style: unknown kind {self.kind!r}")


def _zipf_cumulative(n: int, s: float) -> list[float]:
    total = 0.0
    cumulative = []
    for rank in range(1, n + 1):
        total += rank**-s
        cumulative.append(total)
    return cumulative


def _draw_rank(rng: SplitMix64, cumulative: list[float]) -> int:
    u = rng.unit() * cumulative[-1]
    return bisect.bisect_right(cumulative, u)


@dataclass(frozen=True)
class WorkloadSpec:
    namespace: str
    file_count: int
    size_distribution: SizeDistribution
    access_count: int
    popularity: Popularity
    read_style: ReadStyle
    duration_ms: int
    seed: int

    def __post_init__(self) -> None:
        if not self.namespace or "/" in self.namespace:
            raise InvalidSpec(f"namespace {self.namespace!r} must be a single path component")
        if self.file_count < 1:
            raise InvalidSpec("file_count must be >= 1")
        if self.access_count < 0:
            raise InvalidSpec("access_count must be >= 0")
        if self.duration_ms < 1:
            raise InvalidSpec("duration_ms must be >= 1")


def parse_workload_spec(text: str) -> WorkloadSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidSpec("workload spec: top-level value must be an object")
    try:
        _reject_unknown(
            "workload spec",
            doc,
            {
                "namespace",
                "file_count",
                "size_distribution",
                "access_count",
                "popularity",
                "read_style",
                "duration_ms",
                "seed",
            },
        )
        sd_obj = _require(doc, "size_distribution", dict, "workload spec")
        _reject_unknown("size_distribution", sd_obj, {"kind", "min", "max", "size", "s"})
        kind = _require(sd_obj, "kind", str, "size_distribution")
        if kind == "fixed":
            sd = SizeDistribution("fixed", fixed_bytes=_require(sd_obj, "size", int, "size_distribution"))
        else:
            sd = SizeDistribution(
                kind,
                min_bytes=_require(sd_obj, "min", int, "size_distribution"),
                max_bytes=_require(sd_obj, "max", int, "size_distribution"),
                exponent=float(sd_obj.get("s", 0.0)),
            )
        pop_obj = _require(doc, "popularity", dict, "workload spec")
        _reject_unknown("popularity", pop_obj, {"kind", "s"})
        popularity = Popularity(
            _require(pop_obj, "kind", str, "popularity"), float(pop_obj.get("s", 0.0))
        )
        rs_obj = _require(doc, "read_style", dict, "workload spec")
        _reject_unknown("read_style", rs_obj, {"kind", "min_len", "max_len"})
        rs_kind = _require(rs_obj, "kind", str, "read_style")
        if rs_kind == "random_range":
            read_style = ReadStyle(
                rs_kind,
                min_len=_require(rs_obj, "min_len", int, "read_style"),
                max_len=_require(rs_obj, "max_len", int, "read_style"),
            )
        else:
            read_style = ReadStyle(rs_kind)
        return WorkloadSpec(
            namespace=_require(doc, "namespace", str, "workload spec"),
            file_count=_require(doc, "file_count", int, "workload spec"),
            size_distribution=sd,
            access_count=_require(doc, "access_count", int, "workload spec"),
            popularity=popularity,
            read_style=read_style,
            duration_ms=_require(doc, "duration_ms", int, "workload spec"),
            seed=_require(doc, "seed", int, "workload spec"),
        )
    except ParseError as exc:
        raise InvalidSpec(str(exc)) from None


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True, slots=True)
class TraceFile:
    meta: FileMeta
    origin: str | None = None  # None: assigned at replay time


@dataclass(frozen=True, slots=True)
class TraceEvent:
    t_ms: int
    client: str
    file: FileId
    offset: int
    length: int


@dataclass(frozen=True)
class Trace:
    catalog: tuple[TraceFile, ...]
    events: tuple[TraceEvent, ...]

    def __post_init__(self) -> None:
        sizes = {}
        for tf in self.catalog:
            if tf.meta.id in sizes:
                raise ValidationError(f"trace catalog: duplicate {tf.meta.id}")
            sizes[tf.meta.id] = tf.meta.size
        previous = None
        for i, ev in enumerate(self.events):
            if ev.file not in sizes:
                raise ValidationError(f"trace event {i}: {ev.file} not in catalog")
            if ev.offset < 0 or ev.length < 0 or ev.offset + ev.length > sizes[ev.file]:
                raise ValidationError(f"trace event {i}: range outside {ev.file}")
            if previous is not None and ev.t_ms < previous:
                raise ValidationError(f"trace event {i}: timestamps not sorted")
            previous = ev.t_ms


def generate(spec: WorkloadSpec, clients: list[str]) -> Trace:
    """Deterministically expand a spec into a trace.

    Draw order (one SplitMix64 stream seeded with spec.seed): per file its
    size then its content seed; then per access the file rank, the client,
    the timestamp, and for ranged reads the length then offset. Events are
    stable-sorted by timestamp afterwards.
    """
    if not clients:
        raise InvalidSpec("clients must be non-empty")
    for c in clients:
        validate_node_id(c, "clients")
    rng = SplitMix64(spec.seed)
    width = len(str(max(spec.file_count - 1, 0)))
    catalog = []
    for i in range(spec.file_count):
        size = spec.size_distribution.draw(rng)
        seed = rng.next_u64()
        path = f"/{spec.namespace}/file_{i:0{width}d}"
        catalog.append(TraceFile(FileMeta(FileId(path), size, seed)))

    if spec.popularity.kind == "zipf":
        cumulative = _zipf_cumulative(spec.file_count, spec.popularity.exponent)
    else:
        cumulative = None
    events = []
    for _ in range(spec.access_count):
        if cumulative is None:
            index = rng.below(spec.file_count)
        else:
            index = _draw_rank(rng, cumulative)
        meta = catalog[index].meta
        client = clients[rng.below(len(clients))]
        t = rng.below(spec.duration_ms)
        if spec.read_style.kind == "full_file":
            offset, length = 0, meta.size
        else:
            max_len = min(spec.read_style.max_len, meta.size)
            min_len = min(spec.read_style.min_len, max_len)
            length = rng.in_range(min_len, max_len)
            offset = rng.below(meta.size - length + 1) if meta.size > length else 0
        events.append(TraceEvent(t, client, meta.id, offset, length))
    events.sort(key=lambda ev: ev.t_ms)
    return Trace(tuple(catalog), tuple(events))


# ---------------------------------------------------------------------------
# trace file format

_UNASSIGNED = "-"


def write_trace(trace: Trace, fp) -> None:
    fp.write("#catalog\n")
    for tf in trace.catalog:
        origin = tf.origin if tf.origin is not None else _UNASSIGNED
        fp.write(f"{tf.meta.id.path}\t{tf.meta.size}\t{tf.meta.gen_seed}\t{origin}\n")
    fp.write("#events\n")
    for ev in trace.events:
        fp.write(f"{ev.t_ms}\t{ev.client}\t{ev.file.path}\t{ev.offset}\t{ev.length}\n")


def read_trace(fp) -> Trace:
    lines = [line.rstrip("\n") for line in fp]
    if not lines or lines[0] != "#catalog":
        raise ParseError("trace: first line must be '#catalog'")
    catalog: list[TraceFile] = []
    events: list[TraceEvent] = []
    section = "catalog"
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if line == "#events":
            section = "events"
            continue
        fields = line.split("\t")
        if section == "catalog":
            if len(fields) != 4:
                raise ParseError(f"trace line {lineno}: catalog rows take 4 fields")
            path, size, seed, origin = fields
            catalog.append(
                TraceFile(
                    FileMeta(FileId(path), int(size), int(seed)),
                    None if origin == _UNASSIGNED else origin,
                )
            )
        else:
            if len(fields) != 5:
                raise ParseError(f"trace line {lineno}: event rows take 5 fields")
            t, client, path, offset, length = fields
            events.append(TraceEvent(int(t), client, FileId(path), int(offset), int(length)))
    return Trace(tuple(catalog), tuple(events))


# ---------------------------------------------------------------------------
# replay


@dataclass
class ReplayResult:
    records: list[AccessRecord]
    reports: list[NamespaceReport]
    caches: dict[str, CacheServer] = field(default_factory=dict)
    origins: dict[str, OriginServer] = field(default_factory=dict)
    transport: SimTransport | None = None


def assign_origin(path: str, origins: list[str]) -> str:
    """Stable assignment for catalog entries that do not pin an origin."""
    return origins[fnv1a_64(path.encode()) % len(origins)]


def replay(
    trace: Trace,
    deployment: DeploymentConfig,
    sim: SimConfig | None = None,
    *,
    deadline_ms: float = 5000.0,
    max_attempts: int | None = None,
) -> ReplayResult:
    """Register the catalog, drive every trace event through the stack, and
    aggregate the resulting access records. Deterministic end to end."""
    sim = sim or SimConfig()
    origin_nodes = sorted(n.id for n in deployment.by_role("origin"))
    if not origin_nodes:
        raise ValidationError("deployment has no origin nodes")
    cache_nodes = [n for n in deployment.nodes if n.role == "cache"]
    client_nodes = [n for n in deployment.nodes if n.role == "client"]
    if not cache_nodes:
        raise ValidationError("deployment has no cache nodes")

    # merge the trace catalog (assigning unpinned origins) with the
    # deployment's own catalog; paths must not conflict
    placed: dict[str, tuple[FileMeta, str]] = {}
    for entry in deployment.catalog:
        placed[entry.meta.id.path] = (entry.meta, entry.origin)
    for tf in trace.catalog:
        origin = tf.origin if tf.origin is not None else assign_origin(tf.meta.id.path, origin_nodes)
        if origin not in origin_nodes:
            raise ValidationError(f"trace catalog: {origin!r} is not an origin node")
        existing = placed.get(tf.meta.id.path)
        if existing is not None and existing != (tf.meta, origin):
            raise ValidationError(f"trace catalog conflicts with deployment for {tf.meta.id}")
        placed[tf.meta.id.path] = (tf.meta, origin)

    federation = FederationIndex.from_deployment(deployment)
    transport = SimTransport(sim)
    origins: dict[str, OriginServer] = {nid: OriginServer(nid) for nid in origin_nodes}
    for path, (meta, origin) in placed.items():
        origins[origin].add_file(path, meta.size, meta.gen_seed)
        federation.register(origin, meta.id)
    for server in origins.values():
        transport.add_handler(server.node_id, server)
    root = deployment.root_redirector
    for node in deployment.by_role("redirector"):
        transport.add_handler(node.id, RedirectorServer(node.id, federation, transport))
    caches: dict[str, CacheServer] = {}
    for node in cache_nodes:
        server = CacheServer.over_transport(
            node.id, deployment.cache_configs[node.id], transport, node.parent or root
        )
        caches[node.id] = server
        transport.add_handler(node.id, server)

    cache_geo = tuple((n.id, n.geo) for n in cache_nodes)
    client_configs = {
        n.id: ClientConfig(cache_geo, n.geo, deadline_ms=deadline_ms, max_attempts=max_attempts)
        for n in client_nodes
    }
    sizes = {path: meta.size for path, (meta, _) in placed.items()}

    log = AccessLog()
    simulator = Simulator()

    def run_event(ev: TraceEvent) -> None:
        cfg = client_configs.get(ev.client)
        if cfg is None:
            raise ValidationError(f"trace event client {ev.client!r} is not a client node")
        try:
            result: ReadReport = read_with_failover(
                cfg, ev.file, ev.offset, ev.length, transport,
                client_id=ev.client, at_ms=float(ev.t_ms),
            )
        except (AllCachesFailed, NotFound):
            for server in caches.values():
                server.pop_access_events()
            log.record(failed_record(ev.t_ms, ev.client, ev.file))
            return
        split = None
        for server in caches.values():
            for event in server.pop_access_events():
                if event.cache == result.served_by and event.path == ev.file.path:
                    split = event
        assert split is not None, "served cache produced no access event"
        log.record(
            AccessRecord(
                t_ms=ev.t_ms,
                client=ev.client,
                cache=result.served_by,
                file=ev.file,
                file_size=sizes[ev.file.path],
                bytes_read=len(result.data),
                bytes_from_cache=split.bytes_from_cache,
                bytes_from_origin=split.bytes_from_origin,
            )
        )

    for ev in trace.events:
        simulator.schedule(ev.t_ms, run_event, ev)
    simulator.run_until(None)

    records = list(log.snapshot())
    return ReplayResult(
        records=records,
        reports=accounting.report(records),
        caches=caches,
        origins=origins,
        transport=transport,
    )
