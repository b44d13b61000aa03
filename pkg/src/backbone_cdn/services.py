"""Wire-protocol services for each node role.

Every service exposes ``handle(payload, now_ms, peer) -> (response, done_ms)``
and issues any sub-requests through the transport it was built with, so the
same object serves under the simulated transport and behind a TCP socket.
"""

from __future__ import annotations

import socketserver
import threading
from dataclasses import dataclass

from . import protocol
from .cache_engine import (
    CacheEngine,
    CacheOverflow,
    NotFound,
    OriginUnavailable,
    RangeError,
)
from .core import FileId, ValidationError, content_version_for, gen_content_range
from .federation import FederationIndex
from .protocol import ProtocolError, Request
from .simnet import TransportError, wall_ms


@dataclass
class OriginFile:
    size: int
    gen_seed: int

    @property
    def version(self) -> int:
        return content_version_for(self.gen_seed, self.size)


class OriginServer:
    """Authoritative store; serves READ/STAT from synthesized content."""

    def __init__(self, node_id: str, files: dict[str, OriginFile] | None = None):
        self.node_id = node_id
        self.files: dict[str, OriginFile] = files or {}
        self.read_count = 0
        self.bytes_served = 0

    def add_file(self, path: str, size: int, gen_seed: int) -> None:
        self.files[path] = OriginFile(size, gen_seed)

    def set_seed(self, path: str, gen_seed: int) -> None:
        """Mutate a file's content in place (its version hash changes)."""
        self.files[path] = OriginFile(self.files[path].size, gen_seed)

    def handle(self, payload: bytes, now_ms: float, peer: str | None = None):
        try:
            request = protocol.parse_request(payload)
        except ProtocolError as exc:
            return protocol.err_response(protocol.BAD_REQUEST, str(exc)), now_ms
        meta = self.files.get(request.path)
        if request.verb == "STAT":
            if meta is None:
                return protocol.err_response(protocol.NOT_FOUND), now_ms
            return protocol.stat_response(meta.size, meta.version), now_ms
        if request.verb == "READ":
            if meta is None:
                return protocol.err_response(protocol.NOT_FOUND), now_ms
            if request.offset + request.length > meta.size:
                return (
                    protocol.err_response(protocol.BAD_REQUEST, "range beyond end of file"),
                    now_ms,
                )
            data = gen_content_range(meta.gen_seed, request.offset, request.length)
            self.read_count += 1
            self.bytes_served += len(data)
            return protocol.ok_response(data), now_ms
        return protocol.err_response(protocol.BAD_REQUEST, f"{request.verb} not served here"), now_ms


class RedirectorServer:
    """Answers LOCATE against the federation index; forwards STAT to holders."""

    def __init__(self, node_id: str, federation: FederationIndex, transport=None):
        self.node_id = node_id
        self.federation = federation
        self.transport = transport

    def handle(self, payload: bytes, now_ms: float, peer: str | None = None):
        try:
            request = protocol.parse_request(payload)
        except ProtocolError as exc:
            return protocol.err_response(protocol.BAD_REQUEST, str(exc)), now_ms
        if request.verb not in ("LOCATE", "STAT"):
            return (
                protocol.err_response(protocol.BAD_REQUEST, f"{request.verb} not served here"),
                now_ms,
            )
        try:
            file = FileId(request.path)
        except ValidationError as exc:
            return protocol.err_response(protocol.BAD_REQUEST, str(exc)), now_ms
        result = self.federation.locate(self.node_id, file)
        if not result.found:
            return protocol.err_response(protocol.NOT_FOUND), now_ms
        if request.verb == "LOCATE":
            return protocol.at_response(result.server), now_ms
        if self.transport is None:
            return protocol.err_response(protocol.INTERNAL, "no transport for STAT"), now_ms
        try:
            response, done = self.transport.request(
                self.node_id, result.server, payload, at=now_ms
            )
        except TransportError:
            return protocol.err_response(protocol.UNAVAILABLE), now_ms
        return response, done


class FederationFetcher:
    """Cache-side fetch path: LOCATE via the entry redirector, then STAT/READ
    the located data server. Keeps a time cursor across sub-requests."""

    def __init__(self, transport, cache_id: str, entry_redirector: str):
        self.transport = transport
        self.cache_id = cache_id
        self.entry_redirector = entry_redirector
        self.now: float = 0.0

    def begin(self, now: float) -> None:
        self.now = now

    def _exchange(self, to_node: str, payload: bytes) -> protocol.Response:
        try:
            raw, completed = self.transport.request(self.cache_id, to_node, payload, at=self.now)
        except TransportError as exc:
            raise OriginUnavailable(f"{to_node}: {exc}") from None
        self.now = max(self.now, completed)
        return protocol.parse_response(raw)

    def locate(self, path: str) -> str:
        response = self._exchange(self.entry_redirector, protocol.locate_request(path))
        if response.kind == "at":
            return response.node
        if response.kind == "err" and response.code == protocol.NOT_FOUND:
            raise NotFound(path)
        raise OriginUnavailable(f"LOCATE {path}: unexpected {response.kind}")

    def stat(self, server: str, path: str) -> tuple[int, int]:
        response = self._exchange(server, protocol.stat_request(path))
        if response.kind == "stat":
            return response.size, response.version
        if response.kind == "err" and response.code == protocol.NOT_FOUND:
            raise NotFound(path)
        raise OriginUnavailable(f"STAT {path}: unexpected {response.kind}")

    def read(self, server: str, path: str, offset: int, length: int) -> bytes:
        response = self._exchange(server, protocol.read_request(path, offset, length))
        if response.kind == "ok":
            return response.payload
        if response.kind == "err" and response.code == protocol.NOT_FOUND:
            raise NotFound(path)
        raise OriginUnavailable(f"READ {path}: unexpected {response.kind}")


@dataclass(frozen=True, slots=True)
class AccessEvent:
    cache: str
    path: str
    offset: int
    length: int
    bytes_from_cache: int
    bytes_from_origin: int


class CacheServer:
    """Fetch-through cache behind the wire protocol.

    Appends an AccessEvent per served READ so a replay harness can recover
    the hit/miss byte split that the wire response does not carry.
    """

    def __init__(self, node_id: str, engine: CacheEngine):
        self.node_id = node_id
        self.engine = engine
        self.access_events: list[AccessEvent] = []
        self._events_lock = threading.Lock()

    @classmethod
    def over_transport(
        cls, node_id: str, config, transport, entry_redirector: str
    ) -> "CacheServer":
        fetcher = FederationFetcher(transport, node_id, entry_redirector)
        return cls(node_id, CacheEngine(config, fetcher))

    def pop_access_events(self) -> list[AccessEvent]:
        with self._events_lock:
            events, self.access_events = self.access_events, []
            return events

    def handle(self, payload: bytes, now_ms: float, peer: str | None = None):
        try:
            request = protocol.parse_request(payload)
        except ProtocolError as exc:
            return protocol.err_response(protocol.BAD_REQUEST, str(exc)), now_ms
        try:
            file = FileId(request.path)
        except ValidationError as exc:
            return protocol.err_response(protocol.BAD_REQUEST, str(exc)), now_ms

        if request.verb == "PURGE":
            self.engine.purge(file)
            return protocol.ok_response(b""), now_ms
        if request.verb == "READ":
            return self._handle_read(request, file, now_ms)
        if request.verb == "STAT":
            return self._handle_stat(file, now_ms)
        return protocol.err_response(protocol.BAD_REQUEST, "LOCATE not served here"), now_ms

    def _handle_read(self, request: Request, file: FileId, now_ms: float):
        try:
            outcome = self.engine.read(file, request.offset, request.length, now_ms)
        except NotFound:
            return protocol.err_response(protocol.NOT_FOUND), self.engine.fetcher.now
        except RangeError as exc:
            return protocol.err_response(protocol.BAD_REQUEST, str(exc)), self.engine.fetcher.now
        except CacheOverflow as exc:
            return protocol.err_response(protocol.INTERNAL, str(exc)), self.engine.fetcher.now
        except OriginUnavailable as exc:
            return protocol.err_response(protocol.UNAVAILABLE, str(exc)), self.engine.fetcher.now
        with self._events_lock:
            self.access_events.append(
                AccessEvent(
                    self.node_id,
                    file.path,
                    request.offset,
                    request.length,
                    outcome.bytes_from_cache,
                    outcome.bytes_from_origin,
                )
            )
        return protocol.ok_response(outcome.data), max(now_ms, self.engine.fetcher.now)

    def _handle_stat(self, file: FileId, now_ms: float):
        fetcher = self.engine.fetcher
        cached = self.engine.entry_meta(file)
        if cached is not None:
            return protocol.stat_response(*cached), now_ms
        fetcher.begin(now_ms)
        try:
            server = fetcher.locate(file.path)
            size, version = fetcher.stat(server, file.path)
        except NotFound:
            return protocol.err_response(protocol.NOT_FOUND), fetcher.now
        except OriginUnavailable as exc:
            return protocol.err_response(protocol.UNAVAILABLE, str(exc)), fetcher.now
        return protocol.stat_response(size, version), fetcher.now


class _NodeRequestHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        line = self.rfile.readline()
        if not line:
            return
        response, _ = self.server.node_handler.handle(line, wall_ms(), None)
        self.wfile.write(response)


class NodeTCPServer(socketserver.ThreadingTCPServer):
    """Serves one wire request per connection on behalf of a node handler."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], handler):
        super().__init__(address, _NodeRequestHandler)
        self.node_handler = handler

    @property
    def bound_address(self) -> tuple[str, int]:
        host, port = self.socket.getsockname()[:2]
        return host, port


def serve_in_thread(handler, host: str = "127.0.0.1", port: int = 0) -> NodeTCPServer:
    server = NodeTCPServer((host, port), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
