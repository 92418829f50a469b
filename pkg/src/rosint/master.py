"""Read-only client for the ROS master XML-RPC API."""

from __future__ import annotations

import asyncio
import logging
import time

from . import xmlrpc
from .errors import (ForbiddenMethod, MalformedHttp, MalformedResponse, SnapshotEmpty,
                     TransportError, XmlRpcFault)
from .httpwire import close_writer, read_response, render_request
from .model import RosSnapshot, SystemState, Target, Transport

log = logging.getLogger(__name__)

READ_ONLY_METHODS = frozenset({"getSystemState", "getParamNames", "getParam", "getUri"})
CALLER_ID = "/rosint_scanner"
VERSION_PARAMS = ("/rosdistro", "/rosversion")
URDF_PARAM = "/robot_description"
PARAM_WHITELIST = frozenset(VERSION_PARAMS + (URDF_PARAM,))
DEFAULT_USER_AGENT = "rosint/0.1 (passive ROS exposure survey)"

# ROS master API status codes
STATUS_SUCCESS = 1


class MasterClient:
    """Speaks to one master; one request per connection, calls never overlap."""

    def __init__(self, host: str, port: int = 11311, timeout_ms: int = 5000,
                 user_agent: str = DEFAULT_USER_AGENT, caller_id: str = CALLER_ID):
        self.host = str(host)
        self.port = port
        self.timeout = timeout_ms / 1000.0
        self.user_agent = user_agent
        self.caller_id = caller_id
        self._lock = asyncio.Lock()

    async def call(self, method: str, *args):
        """Invoke ``method`` and return the payload of the ``[code, msg, payload]`` triple."""
        if method not in READ_ONLY_METHODS:
            raise ForbiddenMethod(f"{method} is not a read-only master method")
        body = xmlrpc.dumps_call(method, [self.caller_id, *args])
        async with self._lock:
            try:
                raw = await asyncio.wait_for(self._post(body), self.timeout)
            except asyncio.TimeoutError:
                raise TransportError(f"{method}: timed out after {self.timeout:.1f}s") from None
        result = xmlrpc.loads_response(raw)
        if not isinstance(result, list) or len(result) != 3:
            raise MalformedResponse(f"{method}: expected [code, message, value]")
        code, message, payload = result
        if code != STATUS_SUCCESS:
            raise XmlRpcFault(code, message)
        return payload

    async def _post(self, body: bytes) -> bytes:
        try:
            reader, writer = await asyncio.open_connection(self.host, self.port)
        except OSError as exc:
            raise TransportError(f"connect {self.host}:{self.port}: {exc}") from None
        try:
            headers = {"User-Agent": self.user_agent, "Content-Type": "text/xml",
                       "Connection": "close"}
            writer.write(render_request("POST", self.host, self.port, "/", headers, body))
            await writer.drain()
            resp = await read_response(reader)
        except MalformedHttp as exc:
            raise TransportError(str(exc)) from None
        except OSError as exc:
            raise TransportError(f"{self.host}:{self.port}: {exc}") from None
        finally:
            await close_writer(writer)
        if resp.status != 200:
            raise TransportError(f"HTTP {resp.status} from XML-RPC endpoint")
        return resp.body

    async def get_system_state(self) -> SystemState:
        payload = await self.call("getSystemState")
        if not isinstance(payload, list) or len(payload) != 3:
            raise MalformedResponse("getSystemState payload must hold three lists")
        tables = []
        for section in payload:
            if not isinstance(section, list):
                raise MalformedResponse("getSystemState section is not a list")
            table = {}
            for entry in section:
                if not (isinstance(entry, list) and len(entry) == 2 and isinstance(entry[1], list)):
                    raise MalformedResponse(f"bad system state entry {entry!r}")
                table[entry[0]] = [str(n) for n in entry[1]]
            tables.append(table)
        return SystemState(*tables)

    async def get_param_names(self) -> list[str]:
        payload = await self.call("getParamNames")
        if not isinstance(payload, list):
            raise MalformedResponse("getParamNames payload is not a list")
        return [str(n) for n in payload]

    async def get_param(self, name: str):
        if name not in PARAM_WHITELIST:
            raise ForbiddenMethod(f"parameter {name} is outside the fetch whitelist")
        return await self.call("getParam", name)

    async def get_uri(self) -> str:
        return await self.call("getUri")

    async def snapshot(self) -> RosSnapshot:
        snap = RosSnapshot(Target(self.host, self.port), time.time(), Transport.XMLRPC_MASTER)
        failures = 0
        try:
            snap.system_state = await self.get_system_state()
            snap.warnings.extend(snap.system_state.name_warnings())
        except (TransportError, XmlRpcFault, MalformedResponse) as exc:
            failures += 1
            snap.warnings.append(f"getSystemState failed: {exc}")
        try:
            snap.param_names = await self.get_param_names()
        except (TransportError, XmlRpcFault, MalformedResponse) as exc:
            failures += 1
            snap.warnings.append(f"getParamNames failed: {exc}")
        if failures == 2:
            raise SnapshotEmpty(f"{self.host}:{self.port}: every master call failed",
                                reason="all-calls-failed", warnings=snap.warnings)

        present = set(snap.param_names or ())
        for name in sorted(PARAM_WHITELIST & present):
            try:
                snap.raw_params_fetched[name] = await self.get_param(name)
            except (TransportError, XmlRpcFault, MalformedResponse) as exc:
                snap.warnings.append(f"getParam {name} failed: {exc}")
        version = snap.raw_params_fetched.get("/rosversion")
        if isinstance(version, str):
            snap.ros_comm_version = version.strip()
        distro = snap.raw_params_fetched.get("/rosdistro")
        if isinstance(distro, str):
            snap.distro_hint = distro.strip()
        urdf = snap.raw_params_fetched.get(URDF_PARAM)
        if isinstance(urdf, str):
            snap.urdf_xml = urdf
        return snap


async def call(endpoint: Target, method_name: str, args=(), timeout_ms: int = 5000):
    return await MasterClient(endpoint.address, endpoint.port, timeout_ms).call(method_name, *args)


async def get_system_state(endpoint: Target, timeout_ms: int = 5000) -> SystemState:
    return await MasterClient(endpoint.address, endpoint.port, timeout_ms).get_system_state()


async def get_param_names(endpoint: Target, timeout_ms: int = 5000) -> list[str]:
    return await MasterClient(endpoint.address, endpoint.port, timeout_ms).get_param_names()


async def snapshot_host(endpoint: Target, timeout_ms: int = 5000,
                        user_agent: str = DEFAULT_USER_AGENT) -> RosSnapshot:
    client = MasterClient(endpoint.address, endpoint.port, timeout_ms, user_agent)
    return await client.snapshot()
