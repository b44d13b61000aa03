"""Tree of data servers and redirectors with escalating file lookup.

Data servers are leaves holding files; redirectors are internal nodes. A
lookup entered at a redirector searches that redirector's subtree first, then
escalates parent by parent, at each ancestor searching only the subtrees not
yet covered. Search order is depth-first with children visited in ascending
node-id order, which also fixes the tie-break when several servers hold the
same file.

Holdings are an in-memory index rather than probed from live servers; lookups
are synchronous and treat the index as authoritative.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .core import DeploymentConfig, FileId

DATA_SERVER = "data_server"
REDIRECTOR = "redirector"


class UnknownNode(KeyError):
    pass


class NotARedirector(ValueError):
    pass


class NotADataServer(ValueError):
    pass


@dataclass
class FederationNode:
    id: str
    kind: str  # DATA_SERVER or REDIRECTOR
    parent: str | None = None
    children: list[str] = field(default_factory=list)  # redirectors only, kept sorted
    holdings: set[FileId] = field(default_factory=set)  # data servers only


@dataclass(frozen=True, slots=True)
class LocateResult:
    server: str | None
    hops: int  # redirectors consulted, entry included

    @property
    def found(self) -> bool:
        return self.server is not None


class FederationIndex:
    """Mutable holdings index over an immutable tree shape.

    Concurrent locate queries are permitted; register/deregister serialize
    through a lock and are individually atomic, so no query observes a
    partially applied registration.
    """

    def __init__(self, nodes: dict[str, FederationNode]):
        self._nodes = nodes
        self._lock = threading.Lock()
        for node in nodes.values():
            node.children.sort()

    @classmethod
    def from_edges(cls, edges: list[tuple[str, str, str | None]]) -> "FederationIndex":
        """Build from (node_id, kind, parent) triples; origins pass DATA_SERVER."""
        nodes = {nid: FederationNode(nid, kind, parent) for nid, kind, parent in edges}
        for node in nodes.values():
            if node.parent is not None:
                nodes[node.parent].children.append(node.id)
        return cls(nodes)

    @classmethod
    def from_deployment(cls, cfg: DeploymentConfig) -> "FederationIndex":
        edges = [
            (n.id, DATA_SERVER if n.role == "origin" else REDIRECTOR, n.parent)
            for n in cfg.nodes
            if n.role in ("origin", "redirector")
        ]
        return cls.from_edges(edges)

    def _get(self, node_id: str) -> FederationNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def node_ids(self) -> list[str]:
        return sorted(self._nodes)

    def data_servers(self) -> list[str]:
        return sorted(n.id for n in self._nodes.values() if n.kind == DATA_SERVER)

    def redirector_count(self) -> int:
        return sum(1 for n in self._nodes.values() if n.kind == REDIRECTOR)

    def holdings(self, server: str) -> frozenset[FileId]:
        node = self._get(server)
        if node.kind != DATA_SERVER:
            raise NotADataServer(server)
        return frozenset(node.holdings)

    def register(self, server: str, file: FileId) -> None:
        node = self._get(server)
        if node.kind != DATA_SERVER:
            raise NotADataServer(server)
        with self._lock:
            node.holdings.add(file)

    def deregister(self, server: str, file: FileId) -> None:
        node = self._get(server)
        if node.kind != DATA_SERVER:
            raise NotADataServer(server)
        with self._lock:
            node.holdings.discard(file)

    def locate(self, entry: str, file: FileId) -> LocateResult:
        """Find a holder of ``file`` starting from redirector ``entry``.

        Searches the entry's subtree, then escalates towards the root,
        skipping already-searched subtrees. Returns the first holder in
        depth-first ascending-node-id order; hops counts every redirector
        the search consulted.
        """
        node = self._get(entry)
        if node.kind != REDIRECTOR:
            raise NotARedirector(entry)

        hops = 0

        def search(redirector: FederationNode, skip: str | None) -> str | None:
            nonlocal hops
            hops += 1
            for child_id in redirector.children:
                if child_id == skip:
                    continue
                child = self._nodes[child_id]
                if child.kind == DATA_SERVER:
                    if file in child.holdings:
                        return child.id
                else:
                    found = search(child, None)
                    if found is not None:
                        return found
            return None

        current = node
        skip: str | None = None
        while True:
            found = search(current, skip)
            if found is not None:
                return LocateResult(found, hops)
            if current.parent is None:
                return LocateResult(None, hops)
            skip = current.id
            current = self._nodes[current.parent]
