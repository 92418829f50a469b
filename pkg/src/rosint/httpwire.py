"""Just enough HTTP/1.1 to probe, speak XML-RPC and upgrade to WebSocket."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field

from .errors import MalformedHttp

MAX_HEADER_LINE = 8192
MAX_HEADERS = 100


@dataclass
class HttpResponse:
    status: int
    reason: str
    headers: dict = field(default_factory=dict)  # lower-cased names
    body: bytes = b""
    version: str = "HTTP/1.1"


@dataclass
class HttpRequest:
    method: str
    path: str
    headers: dict
    body: bytes = b""
    version: str = "HTTP/1.1"


async def _read_line(reader: asyncio.StreamReader) -> bytes:
    try:
        line = await reader.readuntil(b"\n")
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            raise MalformedHttp("connection closed before any response") from None
        raise MalformedHttp("connection closed mid-line") from None
    except asyncio.LimitOverrunError:
        raise MalformedHttp("header line too long") from None
    if len(line) > MAX_HEADER_LINE:
        raise MalformedHttp("header line too long")
    return line.rstrip(b"\r\n")


async def _read_headers(reader) -> dict:
    headers: dict[str, str] = {}
    for _ in range(MAX_HEADERS + 1):
        line = await _read_line(reader)
        if not line:
            return headers
        name, sep, value = line.decode("latin-1").partition(":")
        if not sep or not name.strip():
            raise MalformedHttp(f"bad header line {line[:60]!r}")
        key = name.strip().lower()
        value = value.strip()
        headers[key] = f"{headers[key]}, {value}" if key in headers else value
    raise MalformedHttp("too many headers")


async def _read_body(reader, headers, limit: int, allow_eof: bool) -> bytes:
    if "chunked" in headers.get("transfer-encoding", "").lower():
        chunks, total = [], 0
        while True:
            size_line = await _read_line(reader)
            try:
                size = int(size_line.split(b";")[0].strip(), 16)
            except ValueError:
                raise MalformedHttp("bad chunk size") from None
            if size == 0:
                await _read_line(reader)
                return b"".join(chunks)
            take = min(size, limit - total)
            try:
                data = await reader.readexactly(size)
                await _read_line(reader)
            except asyncio.IncompleteReadError:
                raise MalformedHttp("truncated chunked body") from None
            chunks.append(data[:take])
            total += take
            if total >= limit:
                return b"".join(chunks)
    if "content-length" in headers:
        try:
            length = int(headers["content-length"])
        except ValueError:
            raise MalformedHttp("bad Content-Length") from None
        if length < 0:
            raise MalformedHttp("negative Content-Length")
        want = min(length, limit)
        try:
            return await reader.readexactly(want)
        except asyncio.IncompleteReadError:
            raise MalformedHttp(f"body truncated ({want} bytes announced)") from None
    if not allow_eof:
        return b""
    buf = bytearray()
    while len(buf) < limit:
        chunk = await reader.read(min(65536, limit - len(buf)))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


async def read_response(reader, body_limit: int = 16 << 20, *, read_body: bool = True) -> HttpResponse:
    line = await _read_line(reader)
    parts = line.decode("latin-1").split(" ", 2)
    if len(parts) < 2 or not parts[0].startswith("HTTP/"):
        raise MalformedHttp(f"bad status line {line[:60]!r}")
    try:
        status = int(parts[1])
    except ValueError:
        raise MalformedHttp(f"bad status code {parts[1]!r}") from None
    headers = await _read_headers(reader)
    body = b""
    if read_body and status not in (101, 204, 304) and not 100 <= status < 200:
        body = await _read_body(reader, headers, body_limit, allow_eof=True)
    return HttpResponse(status, parts[2] if len(parts) > 2 else "", headers, body, parts[0])


async def read_request(reader, body_limit: int = 16 << 20) -> HttpRequest:
    line = await _read_line(reader)
    parts = line.decode("latin-1").split()
    if len(parts) != 3 or not parts[2].startswith("HTTP/"):
        raise MalformedHttp(f"bad request line {line[:60]!r}")
    headers = await _read_headers(reader)
    body = await _read_body(reader, headers, body_limit, allow_eof=False)
    return HttpRequest(parts[0], parts[1], headers, body, parts[2])


def render_request(method: str, host: str, port: int, path: str = "/", headers=None,
                   body: bytes = b"") -> bytes:
    lines = [f"{method} {path} HTTP/1.1", f"Host: {host}:{port}"]
    for name, value in (headers or {}).items():
        lines.append(f"{name}: {value}")
    if body or method == "POST":
        lines.append(f"Content-Length: {len(body)}")
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1") + body


_REASONS = {101: "Switching Protocols", 200: "OK", 400: "Bad Request", 404: "Not Found",
            405: "Method Not Allowed", 426: "Upgrade Required", 500: "Internal Server Error",
            501: "Unsupported method ('GET')"}


def render_response(status: int, headers=None, body: bytes = b"", reason: str | None = None) -> bytes:
    reason = reason or _REASONS.get(status, "Unknown")
    lines = [f"HTTP/1.1 {status} {reason}"]
    for name, value in (headers or {}).items():
        lines.append(f"{name}: {value}")
    if status != 101:
        lines.append(f"Content-Length: {len(body)}")
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1") + body


async def close_writer(writer) -> None:
    writer.close()
    try:
        await writer.wait_closed()
    except (ConnectionError, OSError):
        pass
