"""Shared builders for tests: deployments, random federation trees, fetchers."""

from __future__ import annotations

import json
import random

from backbone_cdn.cache_engine import NotFound, OriginUnavailable
from backbone_cdn.core import content_version_for, gen_content_range, parse_deployment
from backbone_cdn.federation import DATA_SERVER, REDIRECTOR, FederationIndex


class DirectFetcher:
    """Cache-engine fetcher serving straight from a dict, no transport.

    files maps path -> (size, gen_seed); mutate it to emulate origin-side
    content changes. fail_after limits successful block reads before
    injected OriginUnavailable errors.
    """

    def __init__(self, files: dict[str, tuple[int, int]]):
        self.files = dict(files)
        self.read_calls: list[tuple[str, int, int]] = []
        self.stat_calls = 0
        self.bytes_fetched = 0
        self.fail_after: int | None = None
        self.now = 0.0

    def begin(self, now: float) -> None:
        self.now = now

    def locate(self, path: str) -> str:
        if path not in self.files:
            raise NotFound(path)
        return "origin"

    def stat(self, server: str, path: str) -> tuple[int, int]:
        if path not in self.files:
            raise NotFound(path)
        self.stat_calls += 1
        size, seed = self.files[path]
        return size, content_version_for(seed, size)

    def read(self, server: str, path: str, offset: int, length: int) -> bytes:
        if self.fail_after is not None and len(self.read_calls) >= self.fail_after:
            raise OriginUnavailable("injected fault")
        size, seed = self.files[path]
        self.read_calls.append((path, offset, length))
        self.bytes_fetched += length
        return gen_content_range(seed, offset, length)


def deployment_doc(
    *,
    capacity_bytes: int = 1 << 20,
    block_size: int = 1024,
    high_watermark: float = 0.95,
    low_watermark: float = 0.90,
    mode: str = "immutable",
    ttl_ms: int | None = None,
    caches: list[tuple[str, float, float]] | None = None,
    clients: list[tuple[str, float, float]] | None = None,
    catalog: list[dict] | None = None,
) -> dict:
    """A one-origin, one-redirector deployment with configurable edges."""
    caches = caches if caches is not None else [("cache1", 40.0, -105.0)]
    clients = clients if clients is not None else [("client1", 47.6, -122.3)]
    nodes = [
        {"id": "origin1", "role": "origin", "lat": 32.9, "lon": -117.2, "parent": "root"},
        {"id": "root", "role": "redirector", "lat": 41.9, "lon": -87.6},
    ]
    nodes += [{"id": cid, "role": "cache", "lat": lat, "lon": lon} for cid, lat, lon in caches]
    nodes += [{"id": cid, "role": "client", "lat": lat, "lon": lon} for cid, lat, lon in clients]
    cache_cfg: dict = {
        "capacity_bytes": capacity_bytes,
        "block_size": block_size,
        "high_watermark": high_watermark,
        "low_watermark": low_watermark,
        "mode": mode,
    }
    if ttl_ms is not None:
        cache_cfg["ttl_ms"] = ttl_ms
    return {
        "nodes": nodes,
        "caches": {cid: dict(cache_cfg) for cid, _, _ in caches},
        "catalog": catalog or [],
    }


def make_deployment(**kwargs):
    return parse_deployment(json.dumps(deployment_doc(**kwargs)))


def random_tree(rng: random.Random, max_nodes: int = 50) -> list[tuple[str, str, str | None]]:
    """Random federation tree as (node_id, kind, parent) edges.

    Node ids are shuffled two-digit names so that id order and tree shape are
    uncorrelated, which is what exercises the tie-break rules.
    """
    n = rng.randint(2, max_nodes)
    names = [f"n{i:02d}" for i in range(n)]
    rng.shuffle(names)
    kinds = {names[0]: REDIRECTOR}
    parents: dict[str, str | None] = {names[0]: None}
    redirectors = [names[0]]
    for name in names[1:]:
        parent = rng.choice(redirectors)
        # bias towards leaves so trees have something to find
        kind = DATA_SERVER if rng.random() < 0.6 else REDIRECTOR
        kinds[name] = kind
        parents[name] = parent
        if kind == REDIRECTOR:
            redirectors.append(name)
    return [(name, kinds[name], parents[name]) for name in names]


def oracle_locate(
    edges: list[tuple[str, str, str | None]],
    holdings: dict[str, set],
    entry: str,
    file,
) -> str | None:
    """Brute-force search-order enumeration, independent of FederationIndex.

    Walks the escalation regions (entry subtree, then each ancestor's
    not-yet-seen subtrees) listing every data server in depth-first
    ascending-id order, and returns the first holder.
    """
    children: dict[str, list[str]] = {}
    parent_of: dict[str, str | None] = {}
    kind_of: dict[str, str] = {}
    for name, kind, parent in edges:
        kind_of[name] = kind
        parent_of[name] = parent
        children.setdefault(name, [])
        if parent is not None:
            children.setdefault(parent, []).append(name)
    for kids in children.values():
        kids.sort()

    def servers_below(node: str, skip: str | None) -> list[str]:
        out = []
        for child in children[node]:
            if child == skip:
                continue
            if kind_of[child] == DATA_SERVER:
                out.append(child)
            else:
                out.extend(servers_below(child, None))
        return out

    current: str | None = entry
    skip: str | None = None
    while current is not None:
        for server in servers_below(current, skip):
            if file in holdings.get(server, set()):
                return server
        skip = current
        current = parent_of[current]
    return None


def build_index(edges) -> FederationIndex:
    return FederationIndex.from_edges(edges)


class SimWorld:
    """One origin, one redirector, one cache wired over a SimTransport."""

    def __init__(self, files: dict[str, tuple[int, int]], *, cache_config=None, sim=None):
        from backbone_cdn.core import CacheConfig, FileId
        from backbone_cdn.services import CacheServer, OriginServer, RedirectorServer
        from backbone_cdn.simnet import SimConfig, SimTransport

        self.sim = sim or SimConfig()
        self.transport = SimTransport(self.sim)
        self.federation = FederationIndex.from_edges(
            [("root", REDIRECTOR, None), ("origin1", DATA_SERVER, "root")]
        )
        self.origin = OriginServer("origin1")
        for path, (size, seed) in files.items():
            self.origin.add_file(path, size, seed)
            self.federation.register("origin1", FileId(path))
        self.redirector = RedirectorServer("root", self.federation, self.transport)
        config = cache_config or CacheConfig(capacity_bytes=64 * 1024, block_size=1024)
        self.cache = CacheServer.over_transport("cache1", config, self.transport, "root")
        self.transport.add_handler("origin1", self.origin)
        self.transport.add_handler("root", self.redirector)
        self.transport.add_handler("cache1", self.cache)

    def ask(self, to: str, payload: bytes, at: float = 0.0):
        from backbone_cdn.protocol import parse_response

        raw, completed = self.transport.request("client1", to, payload, at=at)
        return parse_response(raw), completed
