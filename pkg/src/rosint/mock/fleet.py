"""Loopback emulation of the hosts a scan runs into.

Each fixture runs as one or more asyncio listeners on a background event
loop, so the servers are usable from synchronous tests and from a scanner
running its own loop in the main thread.  Every accepted connection and
every protocol request is appended to the fixture's request log.
"""

from __future__ import annotations

import asyncio
import ipaddress
import json
import logging
import socket
import threading
import time
import xmlrpc.client
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .. import websocket as ws
from ..errors import MalformedHttp, PortInUse
from ..httpwire import close_writer, read_request, render_response

log = logging.getLogger(__name__)

KINDS = ("master", "rosbridge", "tarpit", "plain-http", "closed", "honeypot")
DEFAULT_PORTS = {
    "master": [11311],
    "rosbridge": [9090],
    "tarpit": [11311, 9090, 58243],
    "plain-http": [11311, 9090],
    "closed": [],
    "honeypot": [11311],
}
MASTER_SERVER_HEADER = "BaseHTTP/0.6 Python/3.10"
SILENT_IDLE_SECONDS = 10.0
_ROSBRIDGE_TOPICS = "/rosapi/topics"
_ROSBRIDGE_PARAMS = "/rosapi/get_param_names"


@dataclass
class Fixture:
    kind: str
    host: str = "127.0.0.1"
    ports: Optional[list] = None
    topics: list = field(default_factory=list)
    services: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    behaviors: list = field(default_factory=list)
    protected_topics: list = field(default_factory=list)
    name: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown fixture kind {self.kind!r}")
        if self.ports is None:
            self.ports = list(DEFAULT_PORTS[self.kind])
        norm = []
        for t in self.topics:
            if isinstance(t, str):
                t = {"name": t}
            norm.append({"name": t["name"], "type": t.get("type", "std_msgs/String"),
                         "publishers": list(t.get("publishers", [])),
                         "subscribers": list(t.get("subscribers", []))})
        self.topics = norm
        if self.name is None:
            self.name = f"{self.kind}@{self.host}"

    def behavior(self, name: str, method: str | None = None):
        """Return the argument of behaviour ``name`` (``True`` if bare), else ``None``.

        ``"fault-code"`` applies to every method; ``"fault-code:getParamNames"``
        only to that one.
        """
        for b in self.behaviors:
            key, _, arg = b.partition(":")
            if key != name:
                continue
            if not arg:
                return True
            if method is None or arg == method or not arg[0].isalpha():
                return arg
        return None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def load_fleet_spec(path) -> list[Fixture]:
    """JSON-lines fixture file; blank lines and ``#`` comments are skipped."""
    fixtures = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            fixtures.append(Fixture.from_dict(json.loads(line)))
    return fixtures


def loopback_hosts(count: int, network: str = "127.20.0.0/16") -> list[str]:
    net = ipaddress.ip_network(network)
    hosts = net.hosts()
    return [str(next(hosts)) for _ in range(count)]


@dataclass(frozen=True)
class LogEntry:
    timestamp: float
    peer: str
    port: int
    event: str
    method: Optional[str] = None
    args: tuple = ()


class RequestLog:
    def __init__(self):
        self._entries: list[LogEntry] = []
        self._lock = threading.Lock()

    def append(self, entry: LogEntry):
        with self._lock:
            self._entries.append(entry)

    def entries(self, event: str | None = None) -> list[LogEntry]:
        with self._lock:
            items = list(self._entries)
        return [e for e in items if event is None or e.event == event]

    def methods(self, event: str | None = None) -> list[str]:
        return [e.method for e in self.entries(event) if e.method is not None]

    def clear(self):
        with self._lock:
            self._entries.clear()

    def __len__(self):
        with self._lock:
            return len(self._entries)


class _LoopThread:
    def __init__(self):
        self.loop = asyncio.new_event_loop()
        self.thread = threading.Thread(target=self.loop.run_forever, name="mock-fleet", daemon=True)
        self.thread.start()

    def run(self, coro, timeout=30):
        return asyncio.run_coroutine_threadsafe(coro, self.loop).result(timeout)

    def close(self):
        self.loop.call_soon_threadsafe(self.loop.stop)
        self.thread.join(5)
        self.loop.close()


class FixtureServer:
    def __init__(self, fixture: Fixture):
        self.fixture = fixture
        self.request_log = RequestLog()
        self._servers: list = []
        self._raw: list[socket.socket] = []
        self._writers: set = set()
        self._owner: Optional["Fleet"] = None

    @property
    def host(self) -> str:
        return self.fixture.host

    @property
    def ports(self) -> list:
        return list(self.fixture.ports)

    @property
    def listener_count(self) -> int:
        return len(self._servers) + len(self._raw) // 2

    def _log(self, peer, port, event, method=None, args=()):
        self.request_log.append(LogEntry(time.time(), peer, port, event, method, tuple(args)))

    async def start(self):
        fx = self.fixture
        if fx.kind == "closed":
            return
        for port in fx.ports:
            if fx.behavior("drop"):
                self._open_drop_listener(port)
                continue
            handler = self._handler_for(port)
            try:
                server = await asyncio.start_server(handler, fx.host, port, backlog=512)
            except OSError as exc:
                raise PortInUse(f"{fx.host}:{port}: {exc}") from None
            self._servers.append(server)

    def _open_drop_listener(self, port):
        # listen(0) plus one parked connection fills the accept queue, so the
        # kernel silently drops later SYNs and clients see a timeout
        lsock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        lsock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            lsock.bind((self.fixture.host, port))
        except OSError as exc:
            lsock.close()
            raise PortInUse(f"{self.fixture.host}:{port}: {exc}") from None
        lsock.listen(0)
        plug = socket.create_connection((self.fixture.host, port), timeout=2)
        self._raw.extend([lsock, plug])

    async def stop(self):
        for server in self._servers:
            server.close()
        for writer in list(self._writers):
            writer.close()
        for server in self._servers:
            try:
                await asyncio.wait_for(server.wait_closed(), 2)
            except asyncio.TimeoutError:
                pass
        for s in self._raw:
            s.close()
        self._servers.clear()
        self._raw.clear()

    def _handler_for(self, port):
        kind = self.fixture.kind
        impl = {
            "master": self._serve_master,
            "rosbridge": self._serve_rosbridge,
            "plain-http": self._serve_plain_http,
            "tarpit": self._serve_silent,
            "honeypot": self._serve_silent,
        }[kind]

        async def handle(reader, writer):
            peer = writer.get_extra_info("peername")
            peer = f"{peer[0]}:{peer[1]}" if peer else "?"
            self._log(peer, port, "connect")
            self._writers.add(writer)
            try:
                await impl(reader, writer, peer, port)
            except (ConnectionError, asyncio.IncompleteReadError, MalformedHttp, ws.WebSocketClosed):
                pass
            except Exception:  # fixtures must never die on bad input
                log.exception("fixture %s crashed on %s", self.fixture.name, peer)
            finally:
                self._writers.discard(writer)
                await close_writer(writer)

        return handle

    async def _slow(self, method=None):
        arg = self.fixture.behavior("slow", method)
        if arg:
            await asyncio.sleep((500 if arg is True else int(arg)) / 1000.0)

    # -- master -----------------------------------------------------------

    async def _serve_master(self, reader, writer, peer, port):
        req = await read_request(reader)
        self._log(peer, port, "http", req.method, (req.path, req.headers.get("user-agent", "")))
        if req.method != "POST":
            body = xmlrpc.client.dumps(xmlrpc.client.Fault(-32601, f"Unsupported method ('{req.method}')"),
                                       methodresponse=True).encode()
            writer.write(render_response(501, {"Server": MASTER_SERVER_HEADER,
                                               "Content-Type": "text/xml", "Connection": "close"}, body))
            await writer.drain()
            return
        try:
            params, method = xmlrpc.client.loads(req.body)
        except Exception:
            writer.write(render_response(400, {"Server": MASTER_SERVER_HEADER}, b"bad request"))
            await writer.drain()
            return
        self._log(peer, port, "xmlrpc", method, params)
        await self._slow(method)
        if self.fixture.behavior("http-fault", method):
            payload = xmlrpc.client.dumps(xmlrpc.client.Fault(1, "injected XML-RPC fault"),
                                          methodresponse=True)
        else:
            payload = xmlrpc.client.dumps((self._master_result(method, params),), methodresponse=True)
        body = payload.encode("utf-8")
        if self.fixture.behavior("truncate", method):
            head = render_response(200, {"Server": MASTER_SERVER_HEADER, "Content-Type": "text/xml"}, body)
            writer.write(head[: len(head) - len(body) // 2])
            await writer.drain()
            return
        writer.write(render_response(200, {"Server": MASTER_SERVER_HEADER, "Content-Type": "text/xml"}, body))
        await writer.drain()

    def _master_result(self, method, params):
        fx = self.fixture
        if fx.behavior("fault-code", method):
            return [-1, f"injected failure for {method}", 0]
        malformed = fx.behavior("malformed", method)
        if method == "getSystemState":
            pubs = [[t["name"], t["publishers"]] for t in fx.topics if t["publishers"]]
            subs = [[t["name"], t["subscribers"]] for t in fx.topics if t["subscribers"]]
            srvs = [[name, list(providers)] for name, providers in fx.services.items()]
            if malformed:
                return [1, "current system state", [pubs, subs]]
            return [1, "current system state", [pubs, subs, srvs]]
        if malformed:
            return [1, "malformed"]
        if method == "getParamNames":
            return [1, "Parameter names", list(fx.params)]
        if method == "getParam":
            key = params[1] if len(params) > 1 else ""
            if key in fx.params:
                return [1, f"Parameter [{key}]", fx.params[key]]
            return [-1, f"Parameter [{key}] is not set", 0]
        if method == "getUri":
            return [1, "", f"http://{fx.host}:{fx.ports[0]}/"]
        # the scanner never asks these; stock command-line tools do
        if method == "getTopicTypes":
            return [1, "current topics", [[t["name"], t["type"]] for t in fx.topics]]
        if method == "getPublishedTopics":
            return [1, "current topics", [[t["name"], t["type"]] for t in fx.topics if t["publishers"]]]
        return [-1, f"method {method} refused by fixture", 0]

    # -- rosbridge --------------------------------------------------------

    async def _serve_rosbridge(self, reader, writer, peer, port):
        req = await read_request(reader)
        self._log(peer, port, "http", req.method, (req.path, req.headers.get("user-agent", "")))
        if not ws.is_upgrade_request(req):
            writer.write(render_response(400, {"Server": "TornadoServer/4.2.1",
                                               "Content-Type": "text/plain"},
                                         b'Can "Upgrade" only to "WebSocket".'))
            await writer.drain()
            return
        override = "AAAAAAAAAAAAAAAAAAAAAAAAAAA=" if self.fixture.behavior("bad-accept") else None
        writer.write(ws.server_handshake_response(req, override))
        await writer.drain()
        self._log(peer, port, "ws-handshake")
        sock = ws.WebSocket(reader, writer, client=False)
        while True:
            raw = await sock.recv()
            try:
                msg = json.loads(raw)
            except json.JSONDecodeError:
                self._log(peer, port, "ws-message", "<invalid-json>")
                continue
            op = msg.get("op")
            target = msg.get("service") or msg.get("topic")
            self._log(peer, port, "ws-message", op, (target,) if target else ())
            await self._slow(op)
            reply = self._bridge_reply(msg)
            if reply is None:
                continue
            await sock.send(json.dumps(reply))
            if reply.get("op") == "status" and self.fixture.behavior("auth-refuse"):
                await sock.close(1008, "not authenticated")
                return

    def _bridge_reply(self, msg):
        fx = self.fixture
        op, msg_id = msg.get("op"), msg.get("id")
        if fx.behavior("auth-refuse"):
            return {"op": "status", "level": "error", "id": msg_id,
                    "msg": "Client has not authenticated: operation refused"}
        if op != "call_service":
            return {"op": "status", "level": "error", "id": msg_id, "msg": f"op {op} refused by fixture"}
        service = msg.get("service")
        if service == _ROSBRIDGE_TOPICS:
            protected = set(fx.protected_topics)
            names = [t["name"] for t in fx.topics if t["name"] not in protected]
            values = {"topics": names, "types": ["std_msgs/String"] * len(names)}
        elif service == _ROSBRIDGE_PARAMS:
            values = {"names": list(fx.params)}
        else:
            return {"op": "service_response", "id": msg_id, "service": service,
                    "result": False, "values": f"Service {service} does not exist"}
        return {"op": "service_response", "id": msg_id, "service": service,
                "result": True, "values": values}

    # -- everything else ----------------------------------------------------

    async def _serve_plain_http(self, reader, writer, peer, port):
        req = await read_request(reader)
        self._log(peer, port, "http", req.method, (req.path, req.headers.get("user-agent", "")))
        body = b"<!DOCTYPE html><html><head><title>Welcome</title></head><body>It works!</body></html>"
        writer.write(render_response(200, {"Server": "nginx/1.14.0", "Content-Type": "text/html"}, body))
        await writer.drain()

    async def _serve_silent(self, reader, writer, peer, port):
        """Accept, record whatever arrives, never answer."""
        while True:
            try:
                data = await asyncio.wait_for(reader.read(4096), SILENT_IDLE_SECONDS)
            except asyncio.TimeoutError:
                return
            if not data:
                return
            self._log(peer, port, "bytes", None, (data[:1024],))


class Fleet:
    """A set of running fixtures sharing one background event loop."""

    def __init__(self, fixtures, allow_non_loopback: bool = False):
        self.fixtures = list(fixtures)
        seen = set()
        for fx in self.fixtures:
            if not allow_non_loopback and not ipaddress.ip_address(fx.host).is_loopback:
                raise ValueError(f"fixture {fx.name} binds non-loopback {fx.host}; "
                                 "pass allow_non_loopback=True to override")
            for port in fx.ports:
                if (fx.host, port) in seen:
                    raise PortInUse(f"{fx.host}:{port} requested by more than one fixture")
                seen.add((fx.host, port))
        self.servers = [FixtureServer(fx) for fx in self.fixtures]
        self._loop: Optional[_LoopThread] = None

    def start(self) -> "Fleet":
        self._loop = _LoopThread()
        try:
            self._loop.run(self._start_all(), timeout=120)
        except BaseException:
            self.stop()
            raise
        return self

    async def _start_all(self):
        for server in self.servers:
            server._owner = self
            await server.start()

    def stop(self):
        if self._loop is None:
            return
        try:
            self._loop.run(self._stop_all(), timeout=60)
        finally:
            self._loop.close()
            self._loop = None

    async def _stop_all(self):
        await asyncio.gather(*(s.stop() for s in self.servers), return_exceptions=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()

    def by_kind(self, kind: str) -> list[FixtureServer]:
        return [s for s in self.servers if s.fixture.kind == kind]

    def live_listeners(self) -> int:
        return sum(s.listener_count for s in self.servers)


def spawn_fleet(fixtures, allow_non_loopback: bool = False) -> Fleet:
    return Fleet(fixtures, allow_non_loopback).start()


def serve(fixture: Fixture, allow_non_loopback: bool = False) -> FixtureServer:
    """Run one fixture; stop it with ``stop_server(server)``."""
    fleet = spawn_fleet([fixture], allow_non_loopback)
    return fleet.servers[0]


def stop_server(server: FixtureServer):
    if server._owner is not None:
        server._owner.stop()
