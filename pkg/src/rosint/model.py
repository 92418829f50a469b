"""Records passed between the scanner stages, the classifier and the store."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Any, Optional


class Verdict(str, enum.Enum):
    OPEN = "open"
    CLOSED = "closed"
    FILTERED = "filtered"


class Transport(str, enum.Enum):
    XMLRPC_MASTER = "xmlrpc-master"
    ROSBRIDGE = "rosbridge"


class HostCategory(str, enum.Enum):
    IDENTIFIED_ROBOT = "IdentifiedRobot"
    SIMULATION_ONLY = "SimulationOnly"
    EMPTY_CORE = "EmptyCore"
    ONLY_SENSORS = "OnlySensors"
    ONLY_ACTUATORS = "OnlyActuators"
    ONLY_IDENTIFIED_SERVICES = "OnlyIdentifiedServices"
    UNCLASSIFIED = "Unclassified"


CATEGORY_TITLES = {
    HostCategory.IDENTIFIED_ROBOT: "Identified robots",
    HostCategory.SIMULATION_ONLY: "Simulation only",
    HostCategory.EMPTY_CORE: "Empty ROS cores",
    HostCategory.ONLY_SENSORS: "Only sensors",
    HostCategory.ONLY_ACTUATORS: "Only actuators",
    HostCategory.ONLY_IDENTIFIED_SERVICES: "Only identified services",
    HostCategory.UNCLASSIFIED: "Unclassified",
}


@dataclass(frozen=True)
class Target:
    address: str
    port: int

    def __str__(self):
        return f"{self.address}:{self.port}"


@dataclass
class ProbeOutcome:
    target: Target
    verdict: Verdict
    rtt_ms: Optional[float]
    observed_at: float
    attempts: int = 1

    def to_dict(self):
        return {
            "target": asdict(self.target),
            "verdict": self.verdict.value,
            "rtt_ms": self.rtt_ms,
            "observed_at": self.observed_at,
            "attempts": self.attempts,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(Target(**d["target"]), Verdict(d["verdict"]), d["rtt_ms"],
                   d["observed_at"], d.get("attempts", 1))


@dataclass
class HttpFingerprint:
    status_code: int
    headers: dict
    body_prefix: bytes
    looks_like_xmlrpc: bool = False
    looks_like_websocket: bool = False
    note: Optional[str] = None

    def to_dict(self):
        d = asdict(self)
        d["body_prefix"] = self.body_prefix.decode("latin-1")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["body_prefix"] = d["body_prefix"].encode("latin-1")
        return cls(**d)


@dataclass
class SystemState:
    publishers: dict = field(default_factory=dict)
    subscribers: dict = field(default_factory=dict)
    services: dict = field(default_factory=dict)

    def topics(self) -> set:
        return set(self.publishers) | set(self.subscribers)

    def name_warnings(self) -> list[str]:
        out = []
        for kind, table in (("topic", self.publishers), ("topic", self.subscribers),
                            ("service", self.services)):
            for name in table:
                if not isinstance(name, str) or not name.startswith("/"):
                    out.append(f"{kind} name not absolute: {name!r}")
        return out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class RosSnapshot:
    endpoint: Target
    captured_at: float
    transport: Transport
    system_state: Optional[SystemState] = None
    param_names: Optional[list] = None
    ros_comm_version: Optional[str] = None
    distro_hint: Optional[str] = None
    urdf_xml: Optional[str] = None
    raw_params_fetched: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    limitations: list = field(default_factory=list)

    def topics(self) -> set:
        return self.system_state.topics() if self.system_state else set()

    def services(self) -> set:
        return set(self.system_state.services) if self.system_state else set()

    def params(self) -> list:
        return list(self.param_names or [])

    def to_dict(self):
        return {
            "endpoint": asdict(self.endpoint),
            "captured_at": self.captured_at,
            "transport": self.transport.value,
            "system_state": self.system_state.to_dict() if self.system_state else None,
            "param_names": self.param_names,
            "ros_comm_version": self.ros_comm_version,
            "distro_hint": self.distro_hint,
            "urdf_xml": self.urdf_xml,
            "raw_params_fetched": self.raw_params_fetched,
            "warnings": self.warnings,
            "limitations": self.limitations,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["endpoint"] = Target(**d["endpoint"])
        d["transport"] = Transport(d["transport"])
        if d.get("system_state") is not None:
            d["system_state"] = SystemState.from_dict(d["system_state"])
        return cls(**d)


@dataclass(frozen=True)
class FeatureHit:
    rule_id: str
    label: str
    kind: str
    matched_name: str

    def to_dict(self):
        return asdict(self)


@dataclass
class HostReport:
    """Everything learned about one target during one scan.

    ``stage_reached`` is the furthest funnel stage the host entered.  A
    snapshot (and therefore a category) is present only for stage 4.
    ``disposition`` names why the host left the funnel.
    """

    target: Target
    stage_reached: int
    disposition: str
    outcomes: dict = field(default_factory=dict)
    snapshot: Optional[RosSnapshot] = None
    hits: list = field(default_factory=list)
    category: Optional[HostCategory] = None
    warnings: list = field(default_factory=list)

    @property
    def record_id(self) -> str:
        return str(self.target)

    def to_dict(self) -> dict[str, Any]:
        outcomes = {}
        for stage, ev in self.outcomes.items():
            outcomes[stage] = ev.to_dict() | {"type": type(ev).__name__}
        return {
            "target": asdict(self.target),
            "stage_reached": self.stage_reached,
            "disposition": self.disposition,
            "outcomes": outcomes,
            "snapshot": self.snapshot.to_dict() if self.snapshot else None,
            "hits": [h.to_dict() for h in self.hits],
            "category": self.category.value if self.category else None,
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, d):
        outcomes = {}
        for stage, ev in d.get("outcomes", {}).items():
            ev = dict(ev)
            kind = ev.pop("type")
            outcomes[stage] = (HttpFingerprint if kind == "HttpFingerprint" else ProbeOutcome).from_dict(ev)
        return cls(
            target=Target(**d["target"]),
            stage_reached=d["stage_reached"],
            disposition=d["disposition"],
            outcomes=outcomes,
            snapshot=RosSnapshot.from_dict(d["snapshot"]) if d.get("snapshot") else None,
            hits=[FeatureHit(**h) for h in d.get("hits", [])],
            category=HostCategory(d["category"]) if d.get("category") else None,
            warnings=list(d.get("warnings", [])),
        )
