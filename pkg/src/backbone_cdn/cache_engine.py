"""Fetch-through block cache with watermark eviction and freshness modes.

Reads are served block-granularly: present blocks come from the local store,
missing blocks are fetched from whichever data server the federation locates
and are then kept. Accounting is block-rounded — every present block charges
a full block_size against capacity, including a file's trailing partial block.

Eviction is least-recently-used over (logical tick, file path, block index):
when usage crosses the high watermark, blocks are dropped oldest-first until
usage reaches the low watermark. Blocks fetched by the in-flight read that
triggered an eviction are never its victims. If an entry loses its last block
to eviction its metadata is dropped too, so the next read re-stats the origin
(pressure behaves like an implicit purge).

Freshness: in ``immutable`` mode a cached entry keeps serving the bytes and
version hash it was fetched with, no matter what the origin does, until it is
purged. In ``ttl`` mode an entry older than ttl_ms is revalidated against the
origin's current version hash and refetched only if that hash changed; an
expired-but-unchanged entry just has its clock reset.

Concurrent misses on the same block coalesce into one origin fetch
(single-flight); waiters account the shared bytes as origin bytes, since the
block was absent when they asked.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .core import CacheConfig, FileId

__all__ = [
    "CacheConfig",
    "CacheEngine",
    "CacheOverflow",
    "CacheStats",
    "NotFound",
    "OriginUnavailable",
    "RangeError",
    "ReadOutcome",
]


class NotFound(Exception):
    """No data server in the federation holds the file."""


class OriginUnavailable(Exception):
    """Transport failure while fetching; fully fetched blocks are retained."""


class RangeError(Exception):
    """Requested byte range falls outside the file."""


class CacheOverflow(Exception):
    """File's block-rounded size exceeds the cache capacity; not admitted."""


@dataclass(frozen=True, slots=True)
class ReadOutcome:
    data: bytes
    bytes_from_cache: int
    bytes_from_origin: int

    @property
    def classification(self) -> str:
        # zero-length reads touch no origin and classify as hits
        if self.bytes_from_origin == 0:
            return "hit"
        if self.bytes_from_cache == 0:
            return "miss"
        return "partial"


@dataclass(frozen=True, slots=True)
class CacheStats:
    used_bytes: int
    entry_count: int
    block_count: int
    tick: int


@dataclass
class _Entry:
    version: int
    size: int
    fetched_at: float
    blocks: dict[int, bytes] = field(default_factory=dict)
    last_access: dict[int, int] = field(default_factory=dict)


class _InFlight:
    __slots__ = ("done", "result", "exc")

    def __init__(self) -> None:
        self.done = threading.Event()
        self.result: bytes | None = None
        self.exc: BaseException | None = None


class CacheEngine:
    """Block store plus fetch-through logic against an injected fetcher.

    The fetcher provides ``begin(now)``, ``locate(path) -> server``,
    ``stat(server, path) -> (size, version)``, ``read(server, path, offset,
    length) -> bytes`` and a ``now`` cursor that accumulates time spent on
    sub-requests (zero for pure hits).
    """

    def __init__(self, config: CacheConfig, fetcher):
        self.config = config
        self.fetcher = fetcher
        self._entries: dict[FileId, _Entry] = {}
        self._used = 0
        self._tick = 0
        self._lock = threading.RLock()
        self._inflight: dict[tuple[FileId, int, int], _InFlight] = {}
        self.eviction_events: list[list[tuple[FileId, int]]] = []

    # -- snapshots ----------------------------------------------------------

    def stats(self) -> CacheStats:
        with self._lock:
            blocks = sum(len(e.blocks) for e in self._entries.values())
            return CacheStats(self._used, len(self._entries), blocks, self._tick)

    @property
    def used_bytes(self) -> int:
        return self._used

    def entry_version(self, file: FileId) -> int | None:
        with self._lock:
            entry = self._entries.get(file)
            return None if entry is None else entry.version

    def entry_meta(self, file: FileId) -> tuple[int, int] | None:
        """(size, version) of a cached entry, or None."""
        with self._lock:
            entry = self._entries.get(file)
            return None if entry is None else (entry.size, entry.version)

    def pop_eviction_events(self) -> list[list[tuple[FileId, int]]]:
        with self._lock:
            events, self.eviction_events = self.eviction_events, []
            return events

    # -- core operations ----------------------------------------------------

    def read(self, file: FileId, offset: int, length: int, now: float) -> ReadOutcome:
        self.fetcher.begin(now)
        if offset < 0 or length < 0:
            raise RangeError(f"{file}: negative offset or length")
        server: str | None = None

        with self._lock:
            entry = self._entries.get(file)
        if entry is not None and self.config.mode == "ttl":
            if now - entry.fetched_at >= self.config.ttl_ms:
                server = self.fetcher.locate(file.path)
                _, origin_version = self.fetcher.stat(server, file.path)
                with self._lock:
                    current = self._entries.get(file)
                    if current is entry:
                        if origin_version != entry.version:
                            self._drop_entry(file, entry)
                            entry = None
                        else:
                            entry.fetched_at = now
                    else:
                        entry = current

        if entry is None:
            if server is None:
                server = self.fetcher.locate(file.path)
            size, version = self.fetcher.stat(server, file.path)
            self._admit_check(file, size)
            with self._lock:
                entry = self._entries.get(file)
                if entry is None:
                    entry = _Entry(version=version, size=size, fetched_at=now)
                    self._entries[file] = entry

        if offset + length > entry.size:
            raise RangeError(
                f"{file}: range [{offset}, {offset + length}) exceeds size {entry.size}"
            )
        if length == 0:
            return ReadOutcome(b"", 0, 0)

        bs = self.config.block_size
        first, last = offset // bs, (offset + length - 1) // bs
        parts: list[bytes] = []
        from_cache = 0
        from_origin = 0
        protected: set[tuple[FileId, int]] = set()
        for index in range(first, last + 1):
            block_start = index * bs
            lo = max(offset, block_start)
            hi = min(offset + length, block_start + bs)
            with self._lock:
                data = entry.blocks.get(index)
                if data is not None:
                    self._tick += 1
                    entry.last_access[index] = self._tick
            if data is None:
                if server is None:
                    server = self.fetcher.locate(file.path)
                data = self._fetch_block(file, entry, index, server, protected)
                from_origin += hi - lo
            else:
                from_cache += hi - lo
            parts.append(data[lo - block_start : hi - block_start])
        return ReadOutcome(b"".join(parts), from_cache, from_origin)

    def refresh_check(self, file: FileId, now: float) -> str:
        """'fresh' or 'stale'; stale entries are refetched by the next read."""
        with self._lock:
            entry = self._entries.get(file)
        if entry is None:
            raise KeyError(f"{file} has no cached entry")
        if self.config.mode == "immutable":
            return "fresh"
        if now - entry.fetched_at < self.config.ttl_ms:
            return "fresh"
        self.fetcher.begin(now)
        server = self.fetcher.locate(file.path)
        _, origin_version = self.fetcher.stat(server, file.path)
        return "stale" if origin_version != entry.version else "fresh"

    def evict(self, now: float | None = None) -> list[tuple[FileId, int]]:
        """Watermark check: no-op unless usage exceeds the high watermark."""
        with self._lock:
            if self._used <= self.config.high_watermark * self.config.capacity_bytes:
                return []
            return self._evict_locked(frozenset())

    def purge(self, file: FileId) -> int:
        with self._lock:
            entry = self._entries.get(file)
            if entry is None:
                return 0
            freed = len(entry.blocks) * self.config.block_size
            self._drop_entry(file, entry)
            return freed

    # -- internals ----------------------------------------------------------

    def _admit_check(self, file: FileId, size: int) -> None:
        bs = self.config.block_size
        rounded = ((size + bs - 1) // bs) * bs
        if rounded > self.config.capacity_bytes:
            raise CacheOverflow(
                f"{file}: block-rounded size {rounded} exceeds capacity "
                f"{self.config.capacity_bytes}"
            )

    def _drop_entry(self, file: FileId, entry: _Entry) -> None:
        self._used -= len(entry.blocks) * self.config.block_size
        del self._entries[file]

    def _fetch_block(
        self,
        file: FileId,
        entry: _Entry,
        index: int,
        server: str,
        protected: set[tuple[FileId, int]],
    ) -> bytes:
        key = (file, index, entry.version)
        with self._lock:
            call = self._inflight.get(key)
            leader = call is None
            if leader:
                call = self._inflight[key] = _InFlight()
        if not leader:
            call.done.wait()
            if call.exc is not None:
                raise call.exc
            assert call.result is not None
            return call.result
        try:
            block_start = index * self.config.block_size
            block_len = min(self.config.block_size, entry.size - block_start)
            data = self.fetcher.read(server, file.path, block_start, block_len)
            if len(data) != block_len:
                raise OriginUnavailable(
                    f"{file}: short block {index}: got {len(data)}, wanted {block_len}"
                )
            self._store_block(file, entry, index, data, protected)
            call.result = data
            return data
        except BaseException as exc:
            call.exc = exc
            raise
        finally:
            call.done.set()
            with self._lock:
                self._inflight.pop(key, None)

    def _store_block(
        self,
        file: FileId,
        entry: _Entry,
        index: int,
        data: bytes,
        protected: set[tuple[FileId, int]],
    ) -> None:
        bs = self.config.block_size
        with self._lock:
            if self._entries.get(file) is entry and index in entry.blocks:
                return
            protected.add((file, index))
            # make room first so usage never exceeds capacity, even transiently
            if self._used + bs > self.config.capacity_bytes:
                self._evict_locked(protected)
            if self._entries.get(file) is not entry:
                if file in self._entries:
                    # a concurrent refetch replaced the entry; let it win
                    protected.discard((file, index))
                    return
                # eviction emptied and dropped the entry mid-read; re-attach
                self._entries[file] = entry
            entry.blocks[index] = data
            self._tick += 1
            entry.last_access[index] = self._tick
            self._used += bs
            if self._used > self.config.high_watermark * self.config.capacity_bytes:
                self._evict_locked(protected)

    def _evict_locked(self, protected: frozenset | set) -> list[tuple[FileId, int]]:
        """Drop unprotected blocks oldest-first until usage <= low watermark."""
        bs = self.config.block_size
        target = self.config.low_watermark * self.config.capacity_bytes
        # ticks are unique, so (tick, path, index) never compares FileIds
        victims = sorted(
            ((entry.last_access[index], file.path, index, file)
             for file, entry in self._entries.items()
             for index in entry.blocks
             if (file, index) not in protected),
            key=lambda v: v[:3],
        )
        evicted: list[tuple[FileId, int]] = []
        for _, _, index, file in victims:
            if self._used <= target:
                break
            entry = self._entries[file]
            del entry.blocks[index]
            del entry.last_access[index]
            self._used -= bs
            evicted.append((file, index))
            if not entry.blocks:
                del self._entries[file]
        if evicted:
            self.eviction_events.append(evicted)
        return evicted
