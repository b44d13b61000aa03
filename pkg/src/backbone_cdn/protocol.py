"""Line-oriented wire protocol spoken by every node role.

Requests are single UTF-8 lines, LF-terminated; responses are a header line
optionally followed by a raw binary payload. One request per connection.

    V1 READ <path> <offset> <length>   ->  OK <n>\\n<raw n bytes> | ERR ...
    V1 STAT <path>                     ->  STAT <size> <version-hex16> | ERR ...
    V1 LOCATE <path>                   ->  AT <node-id> | ERR 404 NOT_FOUND
    V1 PURGE <path>                    ->  OK 0

Error responses are ``ERR <code> <message>`` with codes 400 BAD_REQUEST,
404 NOT_FOUND, 503 UNAVAILABLE, 500 INTERNAL.
"""

from __future__ import annotations

from dataclasses import dataclass

BAD_REQUEST = 400
NOT_FOUND = 404
INTERNAL = 500
UNAVAILABLE = 503

VERBS = ("READ", "STAT", "LOCATE", "PURGE")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Request:
    verb: str
    path: str
    offset: int = 0
    length: int = 0


@dataclass(frozen=True, slots=True)
class Response:
    kind: str  # "ok" | "stat" | "at" | "err"
    payload: bytes = b""
    size: int = 0
    version: int = 0
    node: str = ""
    code: int = 0
    message: str = ""


def read_request(path: str, offset: int, length: int) -> bytes:
    return f"V1 READ {path} {offset} {length}\n".encode()


def stat_request(path: str) -> bytes:
    return f"V1 STAT {path}\n".encode()


def locate_request(path: str) -> bytes:
    return f"V1 LOCATE {path}\n".encode()


def purge_request(path: str) -> bytes:
    return f"V1 PURGE {path}\n".encode()


def parse_request(data: bytes) -> Request:
    try:
        line = data.decode()
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"request is not UTF-8: {exc}") from None
    if not line.endswith("\n"):
        raise ProtocolError("request line must end with LF")
    fields = line[:-1].split(" ")
    if len(fields) < 3 or fields[0] != "V1":
        raise ProtocolError(f"malformed request line {line!r}")
    verb = fields[1]
    if verb not in VERBS:
        raise ProtocolError(f"unknown verb {verb!r}")
    if verb == "READ":
        if len(fields) != 5:
            raise ProtocolError("READ takes <path> <offset> <length>")
        try:
            offset, length = int(fields[3]), int(fields[4])
        except ValueError:
            raise ProtocolError("READ offset/length must be integers") from None
        if offset < 0 or length < 0:
            raise ProtocolError("READ offset/length must be non-negative")
        return Request("READ", fields[2], offset, length)
    if len(fields) != 3:
        raise ProtocolError(f"{verb} takes exactly <path>")
    return Request(verb, fields[2])


def ok_response(payload: bytes) -> bytes:
    return f"OK {len(payload)}\n".encode() + payload


def stat_response(size: int, version: int) -> bytes:
    return f"STAT {size} {version:016x}\n".encode()


def at_response(node_id: str) -> bytes:
    return f"AT {node_id}\n".encode()


_ERR_NAMES = {
    BAD_REQUEST: "BAD_REQUEST",
    NOT_FOUND: "NOT_FOUND",
    INTERNAL: "INTERNAL",
    UNAVAILABLE: "UNAVAILABLE",
}


def err_response(code: int, message: str | None = None) -> bytes:
    return f"ERR {code} {message or _ERR_NAMES.get(code, 'ERROR')}\n".encode()


def parse_response(data: bytes) -> Response:
    """Parse a complete response buffer (header line plus any payload)."""
    nl = data.find(b"\n")
    if nl < 0:
        raise ProtocolError("response has no header line")
    header = data[:nl].decode()
    body = data[nl + 1 :]
    fields = header.split(" ")
    tag = fields[0]
    if tag == "OK" and len(fields) == 2:
        n = int(fields[1])
        if len(body) != n:
            raise ProtocolError(f"OK payload length {len(body)} != declared {n}")
        return Response("ok", payload=body)
    if tag == "STAT" and len(fields) == 3:
        return Response("stat", size=int(fields[1]), version=int(fields[2], 16))
    if tag == "AT" and len(fields) == 2:
        return Response("at", node=fields[1])
    if tag == "ERR" and len(fields) >= 3:
        return Response("err", code=int(fields[1]), message=" ".join(fields[2:]))
    raise ProtocolError(f"malformed response header {header!r}")


def recv_response(rfile) -> bytes:
    """Read one complete response from a binary file-like (socket makefile)."""
    header = rfile.readline()
    if not header:
        raise ProtocolError("connection closed before response header")
    if header.startswith(b"OK "):
        n = int(header[3:].strip())
        body = b""
        while len(body) < n:
            chunk = rfile.read(n - len(body))
            if not chunk:
                raise ProtocolError("connection closed mid-payload")
            body += chunk
        return header + body
    return header
