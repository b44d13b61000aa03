"""Domain types, deterministic content generation, and deployment configuration.

File content is synthesized from a 64-bit seed instead of being stored, so
multi-gigabyte-equivalent scenarios run at desk scale while staying byte-exact
and reproducible across machines. The content version hash is FNV-1a 64-bit,
picked because it is bit-exactly specifiable in a few lines of any language.

All types in this module are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import functools
import json
import re
from dataclasses import dataclass, field

FNV64_OFFSET_BASIS = 0xCBF29CE484222325  # 14695981039346656037
FNV64_PRIME = 0x100000001B3  # 1099511628211
_MASK64 = (1 << 64) - 1

DEFAULT_BLOCK_SIZE = 1 << 20  # 1 MiB
DEFAULT_HIGH_WATERMARK = 0.95
DEFAULT_LOW_WATERMARK = 0.90

ROLES = ("origin", "redirector", "cache", "client")

_NODE_ID_RE = re.compile(r"[A-Za-z0-9_.-]+\Z")


class ParseError(ValueError):
    """A configuration document is structurally malformed."""


class ValidationError(ValueError):
    """A well-formed document violates a domain invariant."""


# ---------------------------------------------------------------------------
# identifiers and geography


def validate_node_id(value: object, context: str = "node id") -> str:
    if not isinstance(value, str) or not value:
        raise ValidationError(f"{context}: must be a non-empty string, got {value!r}")
    if not _NODE_ID_RE.match(value):
        raise ValidationError(f"{context}: {value!r} does not match [A-Za-z0-9_.-]+")
    return value


@dataclass(frozen=True, slots=True)
class FileId:
    """Absolute slash-separated path; the first component is the namespace.

    Components may not be empty, '.', '..', or contain whitespace/control
    characters (paths travel on single-line wire commands and TSV rows).
    """

    path: str

    def __post_init__(self) -> None:
        p = self.path
        if not p.startswith("/"):
            raise ValidationError(f"path {p!r} must start with '/'")
        components = p.split("/")[1:]
        if len(components) < 2:
            raise ValidationError(f"path {p!r} needs at least two components")
        for comp in components:
            if not comp:
                raise ValidationError(f"path {p!r} has an empty component")
            if comp in (".", ".."):
                raise ValidationError(f"path {p!r} has a {comp!r} component")
            if any(c.isspace() or ord(c) < 0x21 for c in comp):
                raise ValidationError(f"path {p!r} has whitespace or control characters")

    @property
    def namespace(self) -> str:
        return self.path.split("/", 2)[1]

    def __str__(self) -> str:
        return self.path


@dataclass(frozen=True, slots=True)
class GeoPoint:
    """Position in degrees: lat in [-90, +90], lon in (-180, +180]."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValidationError(f"latitude {self.lat} out of range [-90, 90]")
        if not -180.0 < self.lon <= 180.0:
            raise ValidationError(f"longitude {self.lon} out of range (-180, 180]")


# ---------------------------------------------------------------------------
# deterministic content


def gen_content_byte(gen_seed: int, i: int) -> int:
    """Byte ``i`` of the synthetic content for ``gen_seed``.

    Defined as ((gen_seed mod 2^32) * 31 + i * 131) mod 256; pure and
    platform-independent. Callers are responsible for i < file size.
    """
    return ((gen_seed % (1 << 32)) * 31 + i * 131) % 256


@functools.lru_cache(maxsize=1024)
def _content_pattern(gen_seed: int) -> bytes:
    # i*131 mod 256 has period 256, so the whole stream is one tiled pattern.
    base = (gen_seed % (1 << 32)) * 31
    return bytes((base + i * 131) % 256 for i in range(256))


def gen_content_range(gen_seed: int, offset: int, length: int) -> bytes:
    """Bytes ``offset .. offset+length`` of the content stream.

    Equal to ``bytes(gen_content_byte(gen_seed, i) for i in range(offset,
    offset + length))`` but runs at memcpy speed by tiling the generator's
    256-byte period.
    """
    if offset < 0 or length < 0:
        raise ValueError("offset and length must be non-negative")
    if length == 0:
        return b""
    pattern = _content_pattern(gen_seed)
    phase = offset % 256
    reps = (phase + length + 255) // 256
    return (pattern * reps)[phase : phase + length]


def fnv1a_64(data: bytes, h: int = FNV64_OFFSET_BASIS) -> int:
    """FNV-1a 64-bit hash; pass ``h`` to chain over chunks."""
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h


@functools.lru_cache(maxsize=8192)
def content_version_for(gen_seed: int, size: int) -> int:
    """FNV-1a 64 over the full generated content of a (seed, size) pair."""
    h = FNV64_OFFSET_BASIS
    step = 1 << 20
    for start in range(0, size, step):
        h = fnv1a_64(gen_content_range(gen_seed, start, min(step, size - start)), h)
    return h


@dataclass(frozen=True, slots=True)
class FileMeta:
    """A catalog entry: identity, size, and the seed its content derives from."""

    id: FileId
    size: int
    gen_seed: int

    def __post_init__(self) -> None:
        if not isinstance(self.size, int) or self.size < 0:
            raise ValidationError(f"{self.id}: size must be a non-negative integer")
        if not 0 <= self.gen_seed < (1 << 64):
            raise ValidationError(f"{self.id}: seed must fit in 64 bits")

    @property
    def version(self) -> int:
        """Content hash; always equals FNV-1a 64 of the full generated bytes."""
        return content_version_for(self.gen_seed, self.size)


def content_version(meta: FileMeta) -> int:
    return content_version_for(meta.gen_seed, meta.size)


def version_hex(version: int) -> str:
    return f"{version:016x}"


# ---------------------------------------------------------------------------
# cache configuration (consumed by the cache engine, parsed with deployments)


@dataclass(frozen=True, slots=True)
class CacheConfig:
    """Watermark-evicting block store parameters.

    ``mode`` is the freshness model: ``immutable`` never revalidates a cached
    entry against the origin (write once, read many); ``ttl`` revalidates an
    entry older than ``ttl_ms`` and refetches when the origin's version hash
    changed (write few, read many).
    """

    capacity_bytes: int
    block_size: int = DEFAULT_BLOCK_SIZE
    high_watermark: float = DEFAULT_HIGH_WATERMARK
    low_watermark: float = DEFAULT_LOW_WATERMARK
    mode: str = "immutable"
    ttl_ms: int | None = None

    def __post_init__(self) -> None:
        if self.block_size < 1024 or self.block_size & (self.block_size - 1):
            raise ValidationError(f"block_size {self.block_size} must be a power of two >= 1024")
        if self.capacity_bytes < self.block_size:
            raise ValidationError(
                f"capacity {self.capacity_bytes} must be at least one block ({self.block_size})"
            )
        if not 0.0 < self.high_watermark <= 1.0:
            raise ValidationError(f"high_watermark {self.high_watermark} must be in (0, 1]")
        if not 0.0 < self.low_watermark < self.high_watermark:
            raise ValidationError(
                f"low_watermark {self.low_watermark} must be in (0, high_watermark)"
            )
        if self.mode not in ("immutable", "ttl"):
            raise ValidationError(f"mode {self.mode!r} must be 'immutable' or 'ttl'")
        if self.mode == "ttl":
            if not isinstance(self.ttl_ms, int) or self.ttl_ms <= 0:
                raise ValidationError("ttl mode requires a positive integer ttl_ms")
        elif self.ttl_ms is not None:
            raise ValidationError("ttl_ms is only valid in ttl mode")


# ---------------------------------------------------------------------------
# deployment documents


@dataclass(frozen=True, slots=True)
class NodeSpec:
    id: str
    role: str
    geo: GeoPoint
    parent: str | None = None


@dataclass(frozen=True, slots=True)
class CatalogFile:
    meta: FileMeta
    origin: str


@dataclass(frozen=True)
class DeploymentConfig:
    """Validated node set, per-cache configuration, and file catalog.

    Parent edges over origin and redirector nodes always form a single rooted
    tree (the federation). A cache's optional parent names the redirector it
    enters the federation through; caches without one use the root.
    """

    nodes: tuple[NodeSpec, ...]
    cache_configs: dict[str, CacheConfig] = field(default_factory=dict)
    catalog: tuple[CatalogFile, ...] = ()

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def by_role(self, role: str) -> list[NodeSpec]:
        return [n for n in self.nodes if n.role == role]

    @property
    def root_redirector(self) -> str:
        for n in self.nodes:
            if n.role == "redirector" and n.parent is None:
                return n.id
        raise ValidationError("no root redirector")


def _reject_unknown(context: str, obj: dict, allowed: set[str]) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ParseError(f"{context}: unknown field(s) {sorted(unknown)}")


def _require(obj: dict, key: str, kind: type | tuple, context: str):
    if key not in obj:
        raise ParseError(f"{context}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ParseError(f"{context}: field {key!r} has wrong type")
    return value


def _parse_node(index: int, obj: object) -> NodeSpec:
    context = f"nodes[{index}]"
    if not isinstance(obj, dict):
        raise ParseError(f"{context}: must be an object")
    _reject_unknown(context, obj, {"id", "role", "lat", "lon", "parent"})
    node_id = validate_node_id(_require(obj, "id", str, context), context)
    role = _require(obj, "role", str, context)
    if role not in ROLES:
        raise ValidationError(f"node {node_id!r}: unknown role {role!r}")
    if "lat" not in obj or "lon" not in obj:
        raise ValidationError(f"node {node_id!r}: missing GeoPoint (lat/lon)")
    lat = _require(obj, "lat", (int, float), context)
    lon = _require(obj, "lon", (int, float), context)
    try:
        geo = GeoPoint(float(lat), float(lon))
    except ValidationError as exc:
        raise ValidationError(f"node {node_id!r}: {exc}") from None
    parent = obj.get("parent")
    if parent is not None:
        parent = validate_node_id(parent, f"node {node_id!r}: parent")
    return NodeSpec(node_id, role, geo, parent)


def _validate_federation_tree(nodes: list[NodeSpec]) -> None:
    by_id = {n.id: n for n in nodes}
    members = [n for n in nodes if n.role in ("origin", "redirector")]
    roots = []
    for n in members:
        if n.parent is None:
            if n.role == "origin":
                raise ValidationError(f"origin {n.id!r} must have a redirector parent")
            roots.append(n.id)
        else:
            parent = by_id.get(n.parent)
            if parent is None:
                raise ValidationError(f"node {n.id!r}: parent {n.parent!r} does not exist")
            if parent.role != "redirector":
                raise ValidationError(
                    f"node {n.id!r}: parent {n.parent!r} must be a redirector, is {parent.role}"
                )
    if len(roots) != 1:
        raise ValidationError(
            f"federation must have exactly one root redirector, found {sorted(roots)}"
        )
    for n in members:
        seen: list[str] = []
        current: str | None = n.id
        while current is not None:
            if current in seen:
                cycle = seen[seen.index(current) :] + [current]
                raise ValidationError(f"parent cycle: {' -> '.join(cycle)}")
            seen.append(current)
            current = by_id[current].parent

    for n in nodes:
        if n.role == "cache" and n.parent is not None:
            parent = by_id.get(n.parent)
            if parent is None or parent.role != "redirector":
                raise ValidationError(
                    f"cache {n.id!r}: parent {n.parent!r} must name a redirector"
                )
        if n.role == "client" and n.parent is not None:
            raise ValidationError(f"client {n.id!r} may not have a parent")


def _parse_cache_config(node_id: str, obj: object) -> CacheConfig:
    context = f"caches[{node_id!r}]"
    if not isinstance(obj, dict):
        raise ParseError(f"{context}: must be an object")
    _reject_unknown(
        context,
        obj,
        {"capacity_bytes", "block_size", "high_watermark", "low_watermark", "mode", "ttl_ms"},
    )
    kwargs: dict = {"capacity_bytes": _require(obj, "capacity_bytes", int, context)}
    if "block_size" in obj:
        kwargs["block_size"] = _require(obj, "block_size", int, context)
    if "high_watermark" in obj:
        kwargs["high_watermark"] = float(_require(obj, "high_watermark", (int, float), context))
    if "low_watermark" in obj:
        kwargs["low_watermark"] = float(_require(obj, "low_watermark", (int, float), context))
    if "mode" in obj:
        kwargs["mode"] = _require(obj, "mode", str, context)
    if "ttl_ms" in obj:
        kwargs["ttl_ms"] = _require(obj, "ttl_ms", int, context)
    try:
        return CacheConfig(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{context}: {exc}") from None


def _parse_catalog_entry(index: int, obj: object, origin_ids: set[str]) -> CatalogFile:
    context = f"catalog[{index}]"
    if not isinstance(obj, dict):
        raise ParseError(f"{context}: must be an object")
    _reject_unknown(context, obj, {"path", "size", "seed", "origin"})
    path = _require(obj, "path", str, context)
    size = _require(obj, "size", int, context)
    seed = _require(obj, "seed", int, context)
    origin = _require(obj, "origin", str, context)
    try:
        meta = FileMeta(FileId(path), size, seed)
    except ValidationError as exc:
        raise ValidationError(f"{context}: {exc}") from None
    if origin not in origin_ids:
        raise ValidationError(f"{context}: origin {origin!r} is not an origin node")
    return CatalogFile(meta, origin)


def parse_deployment(text: str) -> DeploymentConfig:
    """Parse and fully validate a deployment document (UTF-8 JSON)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("deployment: top-level value must be an object")
    _reject_unknown("deployment", doc, {"nodes", "caches", "catalog"})

    raw_nodes = _require(doc, "nodes", list, "deployment")
    nodes = [_parse_node(i, obj) for i, obj in enumerate(raw_nodes)]
    seen_ids: set[str] = set()
    for n in nodes:
        if n.id in seen_ids:
            raise ValidationError(f"duplicate node id {n.id!r}")
        seen_ids.add(n.id)
    _validate_federation_tree(nodes)

    raw_caches = doc.get("caches", {})
    if not isinstance(raw_caches, dict):
        raise ParseError("deployment: field 'caches' must be an object")
    cache_ids = {n.id for n in nodes if n.role == "cache"}
    for key in raw_caches:
        if key not in cache_ids:
            raise ValidationError(f"caches[{key!r}]: not a cache node")
    missing = cache_ids - set(raw_caches)
    if missing:
        raise ValidationError(f"cache node(s) without configuration: {sorted(missing)}")
    cache_configs = {k: _parse_cache_config(k, v) for k, v in raw_caches.items()}

    raw_catalog = doc.get("catalog", [])
    if not isinstance(raw_catalog, list):
        raise ParseError("deployment: field 'catalog' must be an array")
    origin_ids = {n.id for n in nodes if n.role == "origin"}
    catalog = [_parse_catalog_entry(i, obj, origin_ids) for i, obj in enumerate(raw_catalog)]
    seen_paths: set[str] = set()
    for entry in catalog:
        if entry.meta.id.path in seen_paths:
            raise ValidationError(f"duplicate catalog path {entry.meta.id.path!r}")
        seen_paths.add(entry.meta.id.path)

    return DeploymentConfig(tuple(nodes), cache_configs, tuple(catalog))


def serialize_deployment(cfg: DeploymentConfig) -> str:
    """Inverse of parse_deployment; parse(serialize(cfg)) == cfg."""
    nodes = []
    for n in cfg.nodes:
        obj: dict = {"id": n.id, "role": n.role, "lat": n.geo.lat, "lon": n.geo.lon}
        if n.parent is not None:
            obj["parent"] = n.parent
        nodes.append(obj)
    caches = {}
    for node_id in sorted(cfg.cache_configs):
        cc = cfg.cache_configs[node_id]
        obj = {
            "capacity_bytes": cc.capacity_bytes,
            "block_size": cc.block_size,
            "high_watermark": cc.high_watermark,
            "low_watermark": cc.low_watermark,
            "mode": cc.mode,
        }
        if cc.ttl_ms is not None:
            obj["ttl_ms"] = cc.ttl_ms
        caches[node_id] = obj
    catalog = [
        {"path": e.meta.id.path, "size": e.meta.size, "seed": e.meta.gen_seed, "origin": e.origin}
        for e in cfg.catalog
    ]
    return json.dumps({"nodes": nodes, "caches": caches, "catalog": catalog}, indent=2) + "\n"
