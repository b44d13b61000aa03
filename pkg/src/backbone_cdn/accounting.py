"""Per-namespace usage accounting over access records.

The working set of a window is the sum of the distinct files accessed in it,
each counted once at full file size regardless of how much of it was read.
Data read is the plain sum of bytes served. The reuse factor is their ratio:
how many times the whole working set was read, which approximates the cache
hit ratio for full-file workloads.

All aggregation runs on exact integer byte counts; ratios are derived at the
end and terabyte conversions happen only at render time. Windows are
half-open [t0, t1) so adjacent windows partition a log.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from typing import Iterable

from .core import FileId, ValidationError, validate_node_id


class InvalidRecord(ValueError):
    pass


class UndefinedRatio(ValueError):
    pass


class LogFormatError(ValueError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"access log line {lineno}: {reason}")
        self.lineno = lineno


FAILED_CACHE_MARKER = "-"  # cache field of a failed access (zero bytes everywhere)


@dataclass(frozen=True, slots=True)
class AccessRecord:
    """One client read: when, who, through which cache, and the byte split."""

    t_ms: int
    client: str
    cache: str
    file: FileId
    file_size: int
    bytes_read: int
    bytes_from_cache: int
    bytes_from_origin: int

    def __post_init__(self) -> None:
        for name in ("t_ms", "file_size", "bytes_read", "bytes_from_cache", "bytes_from_origin"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise InvalidRecord(f"{name} must be a non-negative integer, got {value!r}")
        if self.bytes_from_cache + self.bytes_from_origin != self.bytes_read:
            raise InvalidRecord(
                "bytes_read: bytes_from_cache + bytes_from_origin "
                f"({self.bytes_from_cache} + {self.bytes_from_origin}) != {self.bytes_read}"
            )


def failed_record(t_ms: int, client: str, file: FileId) -> AccessRecord:
    """A failed event: contributes zero bytes to every aggregate."""
    return AccessRecord(t_ms, client, FAILED_CACHE_MARKER, file, 0, 0, 0, 0)


class AccessLog:
    """Append-only, order-preserving record log; appends serialize."""

    def __init__(self) -> None:
        self._records: list[AccessRecord] = []
        self._lock = threading.Lock()

    def record(self, r: AccessRecord) -> None:
        if not isinstance(r, AccessRecord):
            raise InvalidRecord(f"not an AccessRecord: {r!r}")
        with self._lock:
            self._records.append(r)

    def snapshot(self) -> tuple[AccessRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self.snapshot())


def _in_window(r: AccessRecord, t0: int | None, t1: int | None) -> bool:
    return (t0 is None or r.t_ms >= t0) and (t1 is None or r.t_ms < t1)


def working_set(
    records: Iterable[AccessRecord],
    namespace: str,
    t0: int | None = None,
    t1: int | None = None,
) -> int:
    """Sum of distinct-file sizes accessed in [t0, t1).

    A file appearing with several sizes (failed events log size 0) counts at
    the largest size observed in the window.
    """
    sizes: dict[FileId, int] = {}
    for r in records:
        if r.file.namespace == namespace and _in_window(r, t0, t1):
            sizes[r.file] = max(sizes.get(r.file, 0), r.file_size)
    return sum(sizes.values())


def data_read(
    records: Iterable[AccessRecord],
    namespace: str,
    t0: int | None = None,
    t1: int | None = None,
) -> int:
    return sum(
        r.bytes_read
        for r in records
        if r.file.namespace == namespace and _in_window(r, t0, t1)
    )


def reuse_factor(
    records: Iterable[AccessRecord],
    namespace: str,
    t0: int | None = None,
    t1: int | None = None,
) -> float:
    """data_read / working_set for the window; how often the set was read."""
    records = list(records)
    ws = working_set(records, namespace, t0, t1)
    if ws == 0:
        raise UndefinedRatio(f"working set of {namespace!r} is empty")
    return data_read(records, namespace, t0, t1) / ws


def render_reuse_factor(value: float) -> str:
    """Table rendering: nearest integer when >= 10, else one decimal."""
    if value >= 10:
        return str(math.floor(value + 0.5))
    return f"{value:.1f}"


@dataclass(frozen=True, slots=True)
class NamespaceReport:
    namespace: str
    working_set_bytes: int
    data_read_bytes: int
    hits_bytes: int
    misses_bytes: int
    origin_bytes: int
    reuse_factor: float
    hit_ratio: float

    @property
    def reuse_factor_display(self) -> str:
        return render_reuse_factor(self.reuse_factor)

    def to_json_obj(self) -> dict:
        return {
            "namespace": self.namespace,
            "working_set_bytes": self.working_set_bytes,
            "data_read_bytes": self.data_read_bytes,
            "reuse_factor": _sig6(self.reuse_factor),
            "reuse_factor_display": self.reuse_factor_display,
            "hits_bytes": self.hits_bytes,
            "misses_bytes": self.misses_bytes,
            "hit_ratio": _sig6(self.hit_ratio),
            "origin_bytes": self.origin_bytes,
        }


def _sig6(value: float) -> float:
    return float(f"{value:.6g}")


def report(
    records: Iterable[AccessRecord],
    t0: int | None = None,
    t1: int | None = None,
) -> list[NamespaceReport]:
    """One NamespaceReport per namespace with a record in the window, sorted."""
    windowed = [r for r in records if _in_window(r, t0, t1)]
    namespaces = sorted({r.file.namespace for r in windowed})
    out: list[NamespaceReport] = []
    for ns in namespaces:
        ns_records = [r for r in windowed if r.file.namespace == ns]
        ws = working_set(ns_records, ns)
        read = sum(r.bytes_read for r in ns_records)
        hits = sum(r.bytes_from_cache for r in ns_records)
        misses = sum(r.bytes_from_origin for r in ns_records)
        out.append(
            NamespaceReport(
                namespace=ns,
                working_set_bytes=ws,
                data_read_bytes=read,
                hits_bytes=hits,
                misses_bytes=misses,
                origin_bytes=misses,
                reuse_factor=read / ws if ws else 0.0,
                hit_ratio=hits / read if read else 0.0,
            )
        )
    return out


def report_to_json(reports: list[NamespaceReport]) -> str:
    return json.dumps([r.to_json_obj() for r in reports], indent=2) + "\n"


# ---------------------------------------------------------------------------
# access log file format (TSV, one record per line)

_LOG_FIELDS = 8


def format_log_line(r: AccessRecord) -> str:
    return (
        f"{r.t_ms}\t{r.client}\t{r.cache}\t{r.file.path}\t{r.file_size}"
        f"\t{r.bytes_read}\t{r.bytes_from_cache}\t{r.bytes_from_origin}\n"
    )


def write_log(records: Iterable[AccessRecord], fp) -> None:
    for r in records:
        fp.write(format_log_line(r))


def read_log(fp) -> list[AccessRecord]:
    """Parse an access log; LogFormatError names the offending line."""
    records: list[AccessRecord] = []
    for lineno, line in enumerate(fp, start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) != _LOG_FIELDS:
            raise LogFormatError(lineno, f"expected {_LOG_FIELDS} fields, got {len(fields)}")
        try:
            record = AccessRecord(
                t_ms=int(fields[0]),
                client=validate_node_id(fields[1], "client"),
                cache=validate_node_id(fields[2], "cache"),
                file=FileId(fields[3]),
                file_size=int(fields[4]),
                bytes_read=int(fields[5]),
                bytes_from_cache=int(fields[6]),
                bytes_from_origin=int(fields[7]),
            )
        except (ValueError, ValidationError, InvalidRecord) as exc:
            raise LogFormatError(lineno, str(exc)) from None
        records.append(record)
    return records
