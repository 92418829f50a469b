"""Passive interrogation of Rosbridge servers (JSON over WebSocket)."""

from __future__ import annotations

import asyncio
import itertools
import json
import ssl
import time
from dataclasses import dataclass
from typing import Optional

from . import websocket as ws
from .errors import MalformedHttp, ServiceUnavailable, SnapshotEmpty
from .httpwire import close_writer, read_response
from .model import HttpFingerprint, RosSnapshot, SystemState, Target, Transport
from .probe_rules import BridgeServices

NO_NODE_ATTRIBUTION = "no-node-attribution"
NO_SERVICE_LIST = "no-service-list"

_ids = itertools.count(1)


@dataclass
class WebSocketCheck:
    ok: bool
    reason: Optional[str]
    fingerprint: Optional[HttpFingerprint] = None

    def __bool__(self):
        return self.ok


async def detect_websocket(endpoint: Target, timeout_ms: int = 3000,
                           user_agent: str | None = None,
                           tls: ssl.SSLContext | None = None) -> WebSocketCheck:
    """One upgrade handshake; the connection is closed straight afterwards."""
    timeout = timeout_ms / 1000.0
    key = ws.new_client_key()
    headers = {"User-Agent": user_agent} if user_agent else None
    try:
        reader, writer = await asyncio.wait_for(
            asyncio.open_connection(endpoint.address, endpoint.port, ssl=tls), timeout)
    except asyncio.TimeoutError:
        return WebSocketCheck(False, "timeout")
    except OSError as exc:
        return WebSocketCheck(False, f"connect-error: {exc.strerror or exc}")
    try:
        writer.write(ws.upgrade_request(endpoint.address, endpoint.port, key, headers=headers))
        await writer.drain()
        resp = await asyncio.wait_for(read_response(reader, 1024, read_body=False), timeout)
    except asyncio.TimeoutError:
        return WebSocketCheck(False, "timeout")
    except MalformedHttp as exc:
        return WebSocketCheck(False, f"malformed-http: {exc}")
    except OSError as exc:
        return WebSocketCheck(False, f"io-error: {exc}")
    finally:
        await close_writer(writer)
    reason = ws.check_upgrade(resp, key)
    fp = HttpFingerprint(
        status_code=resp.status,
        headers={k: v for k, v in resp.headers.items() if k in ("server", "content-type", "upgrade")},
        body_prefix=b"",
        looks_like_websocket=reason is None,
        note=reason,
    )
    return WebSocketCheck(reason is None, reason, fp)


class BridgeSession:
    def __init__(self, sock: ws.WebSocket, timeout: float):
        self.sock = sock
        self.timeout = timeout
        self.sent: list[dict] = []

    async def call_service(self, service: str) -> dict:
        msg_id = f"rosint:{next(_ids)}"
        msg = {"op": "call_service", "id": msg_id, "service": service, "args": {}}
        self.sent.append(msg)
        try:
            await self.sock.send(json.dumps(msg))
        except (ws.WebSocketClosed, OSError) as exc:
            raise ServiceUnavailable(f"{service}: connection closed ({exc})", "closed") from None
        deadline = time.monotonic() + self.timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ServiceUnavailable(f"{service}: timeout", "timeout")
            try:
                raw = await asyncio.wait_for(self.sock.recv(), remaining)
            except asyncio.TimeoutError:
                raise ServiceUnavailable(f"{service}: timeout", "timeout") from None
            except (ws.WebSocketClosed, ws.ProtocolError, OSError, UnicodeDecodeError) as exc:
                raise ServiceUnavailable(f"{service}: connection closed ({exc})", "closed") from None
            try:
                reply = json.loads(raw)
            except json.JSONDecodeError:
                continue
            if not isinstance(reply, dict):
                continue
            op = reply.get("op")
            if op == "status" and reply.get("level") == "error" and reply.get("id") in (None, msg_id):
                text = str(reply.get("msg", ""))
                reason = "auth-refused" if "auth" in text.lower() else "status-error"
                raise ServiceUnavailable(f"{service}: {text}", reason)
            if op == "service_response" and reply.get("id") == msg_id:
                if reply.get("result") is False:
                    raise ServiceUnavailable(f"{service}: {reply.get('values')}", "service-error")
                values = reply.get("values")
                return values if isinstance(values, dict) else {}

    async def call_first(self, services) -> dict:
        last = None
        for name in services:
            try:
                return await self.call_service(name)
            except ServiceUnavailable as exc:
                last = exc
                if exc.reason != "service-error":
                    break
        raise last


async def snapshot_rosbridge(endpoint: Target, timeout_ms: int = 5000,
                             services: BridgeServices | None = None,
                             user_agent: str | None = None,
                             tls: ssl.SSLContext | None = None) -> RosSnapshot:
    services = services or BridgeServices()
    timeout = timeout_ms / 1000.0
    headers = {"User-Agent": user_agent} if user_agent else None
    try:
        sock, reason = await ws.connect(endpoint.address, endpoint.port, timeout, headers, tls)
    except (OSError, asyncio.TimeoutError, MalformedHttp) as exc:
        raise SnapshotEmpty(f"{endpoint}: websocket connect failed: {exc}", reason="connect-failed") from None
    if sock is None:
        raise SnapshotEmpty(f"{endpoint}: handshake refused ({reason})", reason=reason)

    snap = RosSnapshot(endpoint, time.time(), Transport.ROSBRIDGE,
                       limitations=[NO_NODE_ATTRIBUTION, NO_SERVICE_LIST])
    session = BridgeSession(sock, timeout)
    reasons = []
    try:
        try:
            values = await session.call_first(services.topic_list_services)
            topics = [str(t) for t in values.get("topics", [])]
            snap.system_state = SystemState(publishers={t: [] for t in topics})
            snap.warnings.extend(snap.system_state.name_warnings())
        except ServiceUnavailable as exc:
            reasons.append(exc.reason)
            snap.warnings.append(f"topic list failed: {exc}")
        try:
            values = await session.call_first(services.param_name_services)
            snap.param_names = [str(n) for n in values.get("names", [])]
        except ServiceUnavailable as exc:
            reasons.append(exc.reason)
            snap.warnings.append(f"parameter names failed: {exc}")
    finally:
        await sock.close()
    if snap.system_state is None and snap.param_names is None:
        # a dropped connection after a refusal still counts as the refusal
        reason = "auth-refused" if "auth-refused" in reasons else (reasons[0] if reasons else None)
        raise SnapshotEmpty(f"{endpoint}: every rosbridge call failed", reason=reason,
                            warnings=snap.warnings)
    return snap
