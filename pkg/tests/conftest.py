import json
import time
from pathlib import Path

import pytest

from rosint.master import READ_ONLY_METHODS
from rosint.mock import loopback_hosts, spawn_fleet
from rosint.model import RosSnapshot, SystemState, Target, Transport
from rosint.probe_rules import BridgeServices

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())

# every fleet any test starts is kept here so the session can audit the wire
SPAWNED_FLEETS = []


def wire_violations(fleets=None):
    """Requests outside the read-only surface, as readable strings."""
    allowed_bridge = BridgeServices().allowed()
    bad = []
    for fleet in SPAWNED_FLEETS if fleets is None else fleets:
        for server in fleet.servers:
            kind = server.fixture.kind
            for e in server.request_log.entries():
                if e.event == "xmlrpc" and e.method not in READ_ONLY_METHODS:
                    bad.append(f"{kind}@{server.host}: xmlrpc {e.method}")
                if e.event == "ws-message":
                    if e.method != "call_service" or not e.args or e.args[0] not in allowed_bridge:
                        bad.append(f"{kind}@{server.host}: ws {e.method} {e.args}")
    return bad


def wire_method_union(fleets=None):
    xmlrpc, bridge = set(), set()
    for fleet in SPAWNED_FLEETS if fleets is None else fleets:
        for server in fleet.servers:
            for e in server.request_log.entries():
                if e.event == "xmlrpc":
                    xmlrpc.add(e.method)
                elif e.event == "ws-message":
                    bridge.add((e.method, e.args[0] if e.args else None))
    return xmlrpc, bridge


@pytest.fixture
def make_fleet():
    started = []

    def factory(fixtures, **kw):
        fleet = spawn_fleet(fixtures, **kw)
        started.append(fleet)
        SPAWNED_FLEETS.append(fleet)
        return fleet

    yield factory
    for fleet in started:
        fleet.stop()


ACCEPTANCE_RESULTS = []


def pytest_collection_modifyitems(session, config, items):
    # acceptance runs last so the passivity criterion sees every fleet of the session
    items.sort(key=lambda item: item.path.name == "test_acceptance.py")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.path.name != "test_acceptance.py":
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        ACCEPTANCE_RESULTS.append((title, report.passed, item.user_properties))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for title, passed, props in ACCEPTANCE_RESULTS:
        detail = "; ".join(f"{k}={v}" for k, v in props)
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else ""))


def pytest_sessionfinish(session, exitstatus):
    if not SPAWNED_FLEETS:
        return
    bad = wire_violations()
    reporter = session.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None:
        reporter.write_line(f"wire passivity over {len(SPAWNED_FLEETS)} fleets: "
                            f"{'PASS' if not bad else 'FAIL ' + '; '.join(bad[:5])}")
    if bad:
        session.exitstatus = 1


def snapshot(topics=(), subscribers=(), services=(), params=(), urdf=None, version=None,
             address="10.0.0.1", transport=Transport.XMLRPC_MASTER):
    """Hand-built snapshot; topics are published by ``/node``."""
    state = SystemState(
        publishers={t: ["/node"] for t in topics},
        subscribers={t: ["/node"] for t in subscribers},
        services={s: ["/node"] for s in services},
    )
    names = list(params)
    if version is not None and "/rosversion" not in names:
        names.append("/rosversion")
    if urdf is not None and "/robot_description" not in names:
        names.append("/robot_description")
    return RosSnapshot(Target(address, 11311), time.time(), transport, state, names,
                       ros_comm_version=version, urdf_xml=urdf)


ROSOUT = ("/rosout", "/rosout_agg")
ROSOUT_SERVICES = ("/rosout/get_loggers", "/rosout/set_logger_level")


_HOSTS = iter(loopback_hosts(60000, "127.64.0.0/10"))


def fresh_hosts(n):
    """Loopback addresses no other test has used in this session."""
    return [next(_HOSTS) for _ in range(n)]


@pytest.fixture(scope="session")
def thousand_open_hosts():
    """1000 plain web servers listening on 11311 only."""
    from rosint.mock import Fixture

    hosts = fresh_hosts(1000)
    fleet = spawn_fleet([Fixture("plain-http", h, ports=[11311]) for h in hosts])
    SPAWNED_FLEETS.append(fleet)
    yield hosts, fleet
    fleet.stop()


def max_in_window(timestamps, width=1.0):
    """Largest number of timestamps inside any half-open window of ``width`` seconds."""
    ts = sorted(timestamps)
    best, lo = 0, 0
    for hi, t in enumerate(ts):
        while ts[lo] <= t - width:
            lo += 1
        best = max(best, hi - lo + 1)
    return best


def ros_report(address, topics=(), params=(), services=ROSOUT_SERVICES, port=11311, **kw):
    """A stage-4 HostReport classified with the default rulebook."""
    from rosint.classify import classify
    from rosint.model import HostReport, ProbeOutcome, Verdict

    snap = snapshot(topics=topics, params=params, services=services, address=address, **kw)
    snap.endpoint = Target(address, port)
    result = classify(snap)
    target = Target(address, port)
    return HostReport(target, 4, "ros",
                      outcomes={"port": ProbeOutcome(target, Verdict.OPEN, 0.3, time.time())},
                      snapshot=snap, hits=result.hits, category=result.category)


def dead_report(address, port=11311):
    from rosint.model import HostReport, ProbeOutcome, Verdict

    target = Target(address, port)
    return HostReport(target, 1, "closed", outcomes={"port": ProbeOutcome(target, Verdict.CLOSED, 0.1, time.time())})
