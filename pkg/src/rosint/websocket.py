"""RFC 6455 handshake and framing for text messages over asyncio streams."""

from __future__ import annotations

import asyncio
import ssl
import base64
import hashlib
import os
import struct

from .errors import MalformedHttp
from .httpwire import read_response, render_request, render_response

GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
OP_CONT, OP_TEXT, OP_BINARY, OP_CLOSE, OP_PING, OP_PONG = 0x0, 0x1, 0x2, 0x8, 0x9, 0xA
MAX_MESSAGE = 16 << 20


class WebSocketClosed(Exception):
    pass


class ProtocolError(Exception):
    pass


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def new_client_key() -> str:
    return base64.b64encode(os.urandom(16)).decode("ascii")


def upgrade_request(host: str, port: int, key: str, path: str = "/", headers=None) -> bytes:
    base = {"Upgrade": "websocket", "Connection": "Upgrade",
            "Sec-WebSocket-Key": key, "Sec-WebSocket-Version": "13"}
    base.update(headers or {})
    return render_request("GET", host, port, path, base)


def check_upgrade(resp, key: str) -> str | None:
    """Return ``None`` when ``resp`` completes the handshake, else a short reason."""
    if resp.status != 101:
        return f"status-{resp.status}"
    if resp.headers.get("upgrade", "").lower() != "websocket":
        return "no-upgrade-header"
    if "upgrade" not in resp.headers.get("connection", "").lower():
        return "no-connection-upgrade"
    if resp.headers.get("sec-websocket-accept") != accept_key(key):
        return "bad-accept"
    return None


def server_handshake_response(request, accept_override: str | None = None) -> bytes:
    key = request.headers.get("sec-websocket-key", "")
    headers = {"Upgrade": "websocket", "Connection": "Upgrade",
               "Sec-WebSocket-Accept": accept_override or accept_key(key)}
    return render_response(101, headers)


def is_upgrade_request(request) -> bool:
    return (request.headers.get("upgrade", "").lower() == "websocket"
            and "sec-websocket-key" in request.headers)


def encode_frame(opcode: int, payload: bytes, mask: bool) -> bytes:
    head = bytearray([0x80 | opcode])
    n = len(payload)
    mbit = 0x80 if mask else 0
    if n < 126:
        head.append(mbit | n)
    elif n < 1 << 16:
        head.append(mbit | 126)
        head += struct.pack("!H", n)
    else:
        head.append(mbit | 127)
        head += struct.pack("!Q", n)
    if mask:
        key = os.urandom(4)
        head += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return bytes(head) + payload


class WebSocket:
    """A connected endpoint. Clients mask outbound frames, servers must not."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, client: bool):
        self.reader = reader
        self.writer = writer
        self.client = client
        self.closed = False

    async def _read_frame(self):
        try:
            b1, b2 = await self.reader.readexactly(2)
            n = b2 & 0x7F
            if n == 126:
                (n,) = struct.unpack("!H", await self.reader.readexactly(2))
            elif n == 127:
                (n,) = struct.unpack("!Q", await self.reader.readexactly(8))
            if n > MAX_MESSAGE:
                raise ProtocolError("frame too large")
            key = await self.reader.readexactly(4) if b2 & 0x80 else None
            payload = await self.reader.readexactly(n)
        except (asyncio.IncompleteReadError, ConnectionError):
            self.closed = True
            raise WebSocketClosed("connection dropped") from None
        if key:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        return bool(b1 & 0x80), b1 & 0x0F, payload

    async def recv(self) -> str:
        parts: list[bytes] = []
        while True:
            fin, opcode, payload = await self._read_frame()
            if opcode == OP_PING:
                await self._send(OP_PONG, payload)
                continue
            if opcode == OP_PONG:
                continue
            if opcode == OP_CLOSE:
                if not self.closed:
                    try:
                        await self._send(OP_CLOSE, payload[:2])
                    except (ConnectionError, OSError):
                        pass
                self.closed = True
                raise WebSocketClosed(payload[2:].decode("utf-8", "replace"))
            parts.append(payload)
            if sum(map(len, parts)) > MAX_MESSAGE:
                raise ProtocolError("message too large")
            if fin:
                return b"".join(parts).decode("utf-8")

    async def _send(self, opcode: int, payload: bytes) -> None:
        self.writer.write(encode_frame(opcode, payload, self.client))
        await self.writer.drain()

    async def send(self, text: str) -> None:
        if self.closed:
            raise WebSocketClosed("send on closed socket")
        await self._send(OP_TEXT, text.encode("utf-8"))

    async def close(self, code: int = 1000, reason: str = "") -> None:
        if not self.closed:
            self.closed = True
            try:
                await self._send(OP_CLOSE, struct.pack("!H", code) + reason.encode("utf-8"))
            except (ConnectionError, OSError):
                pass
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionError, OSError):
            pass


def scanner_tls_context() -> ssl.SSLContext:
    """TLS for ``wss://`` targets addressed by IP: encrypt, but no name or chain checks."""
    ctx = ssl.create_default_context()
    ctx.check_hostname = False
    ctx.verify_mode = ssl.CERT_NONE
    return ctx


async def connect(host: str, port: int, timeout: float, headers=None, tls: ssl.SSLContext | None = None):
    """Open a client WebSocket. Returns ``(socket, None)`` or ``(None, reason)``."""
    key = new_client_key()
    reader, writer = await asyncio.wait_for(asyncio.open_connection(host, port, ssl=tls), timeout)
    try:
        writer.write(upgrade_request(host, port, key, headers=headers))
        await writer.drain()
        resp = await asyncio.wait_for(read_response(reader, 1024, read_body=False), timeout)
    except (MalformedHttp, asyncio.TimeoutError, OSError):
        writer.close()
        raise
    reason = check_upgrade(resp, key)
    if reason:
        writer.close()
        return None, reason
    return WebSocket(reader, writer, client=True), None
