"""Loopback test doubles for ROS masters, Rosbridge servers and decoys."""

from .fleet import (
    DEFAULT_PORTS,
    KINDS,
    Fixture,
    FixtureServer,
    Fleet,
    LogEntry,
    RequestLog,
    load_fleet_spec,
    loopback_hosts,
    serve,
    spawn_fleet,
    stop_server,
)

__all__ = [
    "DEFAULT_PORTS", "KINDS", "Fixture", "FixtureServer", "Fleet", "LogEntry", "RequestLog",
    "load_fleet_spec", "loopback_hosts", "serve", "spawn_fleet", "stop_server",
]
