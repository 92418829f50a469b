"""The staged probe funnel.

Per host, in order:

1. connect probe on the scan port (master 11311 or Rosbridge 9090)
2. connect probe on a normally-closed control port; an open answer marks a
   respond-on-any-port host and drops it
3. one ``GET /`` (master mode) or one WebSocket upgrade (Rosbridge mode)
4. read-only interrogation, only when 1-3 passed

Stages 1-3 draw from a single global rate limiter.
"""

from __future__ import annotations

import asyncio
import errno
import logging
import time
from dataclasses import dataclass, field
from typing import AsyncIterator, Optional

from . import classify
from . import websocket as ws
from .addressing import AddressPlan
from .errors import LocalSocketError, MalformedHttp, ProbeTimeout, SnapshotEmpty
from .httpwire import close_writer, read_response, render_request
from .master import DEFAULT_USER_AGENT, MasterClient
from .model import HostReport, HttpFingerprint, ProbeOutcome, Target, Verdict
from .probe_rules import ProbeRules, XmlRpcMatcher
from .rosbridge import detect_websocket, snapshot_rosbridge

log = logging.getLogger(__name__)

BODY_PREFIX_LIMIT = 1024
RETAINED_HEADERS = ("server", "content-type")

_LOCAL_ERRNOS = {errno.EMFILE, errno.ENFILE, errno.ENOBUFS, errno.ENOMEM, errno.EADDRNOTAVAIL}
_UNREACHABLE_ERRNOS = {errno.EHOSTUNREACH, errno.ENETUNREACH, errno.ETIMEDOUT}


class RateLimiter:
    """Spaces grants at least ``1/rate`` seconds apart.

    Equal spacing keeps every one-second window at or under ``rate`` grants,
    which a burst-capable bucket would not.
    """

    def __init__(self, rate: float):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.interval = 1.0 / rate
        self._next = 0.0
        self._lock = asyncio.Lock()
        self.grants: list[float] = []

    async def acquire(self) -> float:
        async with self._lock:
            now = time.monotonic()
            if now < self._next:
                await asyncio.sleep(self._next - now)
                now = time.monotonic()
            self._next = now + self.interval
            self.grants.append(now)
            return now


@dataclass
class PipelineConfig:
    mode: str = "master"
    master_port: int = 11311
    control_port: int = 58243
    rosbridge_port: int = 9090
    connect_timeout_ms: int = 1000
    http_timeout_ms: int = 3000
    interrogate_timeout_ms: int = 5000
    max_in_flight: int = 100
    rate_limit: float = 100.0
    retries: int = 1
    user_agent: str = DEFAULT_USER_AGENT
    rules: ProbeRules = field(default_factory=ProbeRules)
    rulebook: Optional[list] = None
    interrogate: bool = True
    rosbridge_tls: bool = False

    def __post_init__(self):
        if self.mode not in ("master", "rosbridge"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.control_port in (self.master_port, self.scan_port):
            raise ValueError("control_port must differ from the scanned port")
        if self.rate_limit <= 0:
            raise ValueError("rate_limit must be positive")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")

    def tls_context(self):
        return ws.scanner_tls_context() if self.rosbridge_tls and self.mode == "rosbridge" else None

    @property
    def scan_port(self) -> int:
        return self.master_port if self.mode == "master" else self.rosbridge_port


async def probe_port(target: Target, timeout_ms: int) -> ProbeOutcome:
    """TCP connect probe. No application bytes are written."""
    started = time.monotonic()
    observed = time.time()
    try:
        _, writer = await asyncio.wait_for(
            asyncio.open_connection(target.address, target.port), timeout_ms / 1000.0)
    except asyncio.TimeoutError:
        return ProbeOutcome(target, Verdict.FILTERED, None, observed)
    except (ConnectionRefusedError, ConnectionResetError):
        return ProbeOutcome(target, Verdict.CLOSED, (time.monotonic() - started) * 1000, observed)
    except OSError as exc:
        if exc.errno in _LOCAL_ERRNOS:
            raise LocalSocketError(f"{target}: {exc}") from None
        if exc.errno in _UNREACHABLE_ERRNOS:
            return ProbeOutcome(target, Verdict.FILTERED, None, observed)
        return ProbeOutcome(target, Verdict.CLOSED, (time.monotonic() - started) * 1000, observed)
    rtt = (time.monotonic() - started) * 1000
    await close_writer(writer)
    return ProbeOutcome(target, Verdict.OPEN, rtt, observed)


async def control_probe(address: str, config: PipelineConfig) -> ProbeOutcome:
    return await probe_port(Target(str(address), config.control_port), config.connect_timeout_ms)


def is_tarpit(control: ProbeOutcome) -> bool:
    # only a positive answer disqualifies; filtered control ports are normal
    return control.verdict is Verdict.OPEN


async def http_fingerprint(target: Target, timeout_ms: int, matcher: XmlRpcMatcher | None = None,
                           user_agent: str = DEFAULT_USER_AGENT) -> HttpFingerprint:
    """Send exactly one ``GET /`` and fingerprint the reply."""
    matcher = matcher or XmlRpcMatcher()
    timeout = timeout_ms / 1000.0

    async def exchange():
        reader, writer = await asyncio.open_connection(target.address, target.port)
        try:
            headers = {"User-Agent": user_agent, "Accept": "*/*", "Connection": "close"}
            writer.write(render_request("GET", target.address, target.port, "/", headers))
            await writer.drain()
            return await read_response(reader, BODY_PREFIX_LIMIT)
        finally:
            await close_writer(writer)

    try:
        resp = await asyncio.wait_for(exchange(), timeout)
    except asyncio.TimeoutError:
        raise ProbeTimeout(f"{target}: no HTTP answer within {timeout_ms} ms") from None
    except OSError as exc:
        raise MalformedHttp(f"{target}: connection failed during HTTP probe: {exc}") from None
    headers = {k: v for k, v in resp.headers.items() if k in RETAINED_HEADERS}
    body = resp.body[:BODY_PREFIX_LIMIT]
    return HttpFingerprint(
        status_code=resp.status,
        headers=headers,
        body_prefix=body,
        looks_like_xmlrpc=matcher.matches(resp.status, resp.headers, body),
        looks_like_websocket=False,
    )


class Pipeline:
    """Runs the funnel over a plan; ``probe_log`` records every stage 1-3 probe."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.limiter: RateLimiter | None = None
        self.probe_log: list[tuple[float, int, str]] = []

    async def _limited(self, stage: int, target: Target, coro_factory):
        if self.limiter is None:
            self.limiter = RateLimiter(self.config.rate_limit)
        at = await self.limiter.acquire()
        self.probe_log.append((at, stage, str(target)))
        return await coro_factory()

    async def _probe(self, stage: int, target: Target) -> ProbeOutcome:
        attempts = 0
        while True:
            attempts += 1
            try:
                outcome = await self._limited(
                    stage, target, lambda: probe_port(target, self.config.connect_timeout_ms))
            except LocalSocketError:
                if attempts > self.config.retries:
                    raise
                await asyncio.sleep(0.5)
                continue
            outcome.attempts = attempts
            if outcome.verdict is Verdict.FILTERED and attempts <= self.config.retries:
                continue
            return outcome

    async def probe_host(self, address: str) -> HostReport:
        cfg = self.config
        target = Target(str(address), cfg.scan_port)
        report = HostReport(target, 1, "closed")
        try:
            first = await self._probe(1, target)
            report.outcomes["port"] = first
            if first.verdict is not Verdict.OPEN:
                report.disposition = first.verdict.value
                return report

            report.stage_reached = 2
            control = await self._probe(2, Target(target.address, cfg.control_port))
            report.outcomes["control"] = control
            if is_tarpit(control):
                report.disposition = "tarpit"
                return report

            report.stage_reached = 3
            if not await self._stage3(target, report):
                return report
        except LocalSocketError as exc:
            report.disposition = "local-error"
            report.warnings.append(str(exc))
            return report

        if not cfg.interrogate:
            report.disposition = "fingerprint-positive"
            return report
        try:
            if cfg.mode == "master":
                client = MasterClient(target.address, target.port, cfg.interrogate_timeout_ms,
                                      cfg.user_agent)
                snapshot = await client.snapshot()
            else:
                snapshot = await snapshot_rosbridge(target, cfg.interrogate_timeout_ms,
                                                    cfg.rules.rosbridge, cfg.user_agent,
                                                    cfg.tls_context())
        except SnapshotEmpty as exc:
            report.disposition = "interrogation-failed"
            report.warnings.append(f"{exc} (reason: {exc.reason})")
            report.warnings.extend(exc.warnings)
            return report
        result = classify.classify(snapshot, cfg.rulebook)
        report.stage_reached = 4
        report.disposition = "ros"
        report.snapshot = snapshot
        report.hits = result.hits
        report.category = result.category
        report.warnings.extend(snapshot.warnings)
        return report

    async def _stage3(self, target: Target, report: HostReport) -> bool:
        cfg = self.config
        for attempt in range(cfg.retries + 1):
            if cfg.mode == "master":
                try:
                    fp = await self._limited(3, target, lambda: http_fingerprint(
                        target, cfg.http_timeout_ms, cfg.rules.xmlrpc, cfg.user_agent))
                except ProbeTimeout as exc:
                    report.warnings.append(str(exc))
                    report.disposition = "http-timeout"
                    continue
                except MalformedHttp as exc:
                    report.warnings.append(str(exc))
                    report.disposition = "malformed-http"
                    return False
                report.outcomes["http"] = fp
                if not fp.looks_like_xmlrpc:
                    report.disposition = "not-xmlrpc"
                    return False
                return True
            check = await self._limited(3, target, lambda: detect_websocket(
                target, cfg.http_timeout_ms, cfg.user_agent, cfg.tls_context()))
            if check.fingerprint is not None:
                report.outcomes["http"] = check.fingerprint
            if check.ok:
                return True
            report.warnings.append(f"websocket check failed: {check.reason}")
            report.disposition = "not-websocket"
            if check.reason != "timeout":
                return False
        return False

    async def run(self, plan: AddressPlan) -> AsyncIterator[HostReport]:
        self.limiter = RateLimiter(self.config.rate_limit)
        queue: asyncio.Queue = asyncio.Queue()
        done = object()

        async def worker():
            try:
                while True:
                    address = plan.next_address()
                    if address is None:
                        return
                    await queue.put(await self.probe_host(str(address)))
            finally:
                await queue.put(done)

        workers = [asyncio.create_task(worker()) for _ in range(self.config.max_in_flight)]
        remaining = len(workers)
        try:
            while remaining:
                item = await queue.get()
                if item is done:
                    remaining -= 1
                    continue
                yield item
            for w in workers:
                # surface unexpected worker crashes
                w.result()
        finally:
            for w in workers:
                w.cancel()
            await asyncio.gather(*workers, return_exceptions=True)


def run_pipeline(plan: AddressPlan, config: PipelineConfig) -> AsyncIterator[HostReport]:
    return Pipeline(config).run(plan)


def scan(plan: AddressPlan, config: PipelineConfig) -> tuple[list[HostReport], Pipeline]:
    """Blocking helper: run the funnel to completion."""
    pipeline = Pipeline(config)

    async def collect():
        return [r async for r in pipeline.run(plan)]

    return asyncio.run(collect()), pipeline
