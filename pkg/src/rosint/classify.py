"""Rulebook-driven labelling of ROS snapshots.

A rule names a search term and where to look for it (topic, parameter,
service or the URDF robot name).  Matching is case-insensitive.  Modes:

``substring``  term appears anywhere in the name
``token``      term matches whole tokens, names split on non-alphanumerics
``segment``    term equals a whole ``/``-separated path segment
``exact``      term equals the full name
``regex``      ``re.search`` with IGNORECASE
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import RulebookError
from .model import FeatureHit, HostCategory, RosSnapshot

KINDS = ("Sensor", "Actuator", "Simulator", "RobotType", "Library")
MATCH_ON = ("topic", "parameter", "service", "urdf-name")
MODES = ("substring", "token", "segment", "exact", "regex")

BASE_TOPICS = frozenset({"/rosout", "/rosout_agg"})
BASE_SERVICES = frozenset({"/rosout/get_loggers", "/rosout/set_logger_level"})
SIM_PARAM_SUBSTRINGS = ("use_sim_time",)
SIM_PARAM_TOKENS = ("fake",)

DISTRO_PREFIXES = (
    ("1.10.", "Hydro"),
    ("1.11.", "Indigo/Jade"),
    ("1.12.", "Kinetic"),
    ("1.13.", "Lunar"),
)

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def _tokens(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def _contains_run(tokens: list[str], run: list[str]) -> bool:
    k = len(run)
    return any(tokens[i:i + k] == run for i in range(len(tokens) - k + 1))


@dataclass(frozen=True)
class Rule:
    id: str
    kind: str
    label: str
    match_on: str
    pattern: str
    mode: str = "substring"
    provenance: str = "convention"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RulebookError(f"{self.id}: unknown kind {self.kind!r}")
        if self.match_on not in MATCH_ON:
            raise RulebookError(f"{self.id}: unknown match_on {self.match_on!r}")
        if self.mode not in MODES:
            raise RulebookError(f"{self.id}: unknown mode {self.mode!r}")
        if not self.pattern:
            raise RulebookError(f"{self.id}: empty pattern")
        if self.mode == "regex":
            try:
                re.compile(self.pattern)
            except re.error as exc:
                raise RulebookError(f"{self.id}: bad regex: {exc}") from None
        if self.mode == "token" and not _tokens(self.pattern):
            raise RulebookError(f"{self.id}: token pattern has no tokens")

    def matches(self, name: str) -> bool:
        low = name.lower()
        pat = self.pattern.lower()
        if self.mode == "substring":
            return pat in low
        if self.mode == "token":
            return _contains_run(_tokens(low), _tokens(pat))
        if self.mode == "segment":
            return pat in low.split("/")
        if self.mode == "exact":
            return low == pat
        return _compiled(self.pattern).search(name) is not None


@lru_cache(maxsize=None)
def _compiled(pattern: str) -> re.Pattern:
    return re.compile(pattern, re.IGNORECASE)


def parse_rules(lines, source="<rulebook>") -> list[Rule]:
    rules, seen = [], set()
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            raw = json.loads(line)
            rule = Rule(**raw)
        except (json.JSONDecodeError, TypeError) as exc:
            raise RulebookError(f"{source}:{lineno}: {exc}") from None
        if rule.id in seen:
            raise RulebookError(f"{source}:{lineno}: duplicate rule id {rule.id}")
        seen.add(rule.id)
        rules.append(rule)
    return rules


def load_rulebook(path=None) -> list[Rule]:
    if path is None:
        return list(default_rulebook())
    text = Path(path).read_text()
    return parse_rules(text.splitlines(), str(path))


@lru_cache(maxsize=1)
def default_rulebook() -> tuple:
    text = resources.files("rosint.data").joinpath("default_rules.jsonl").read_text()
    return tuple(parse_rules(text.splitlines(), "default_rules.jsonl"))


@dataclass(frozen=True)
class UrdfSummary:
    name: str | None
    links: int
    joints: int


def parse_urdf_summary(xml_text: str) -> UrdfSummary | None:
    """Robot name plus link/joint counts; ``None`` for unparseable input."""
    if not xml_text or "<!DOCTYPE" in xml_text or "<!ENTITY" in xml_text:
        return None
    try:
        root = ET.fromstring(xml_text.encode("utf-8"))
    except ET.ParseError:
        return None
    if root.tag != "robot":
        return None
    return UrdfSummary(root.get("name"), len(root.findall("link")), len(root.findall("joint")))


def _candidates(snapshot: RosSnapshot, match_on: str) -> list[str]:
    if match_on == "topic":
        return sorted(snapshot.topics())
    if match_on == "parameter":
        return sorted(set(snapshot.params()))
    if match_on == "service":
        return sorted(snapshot.services())
    if snapshot.urdf_xml:
        summary = parse_urdf_summary(snapshot.urdf_xml)
        if summary and summary.name:
            return [summary.name]
    return []


def match_rules(snapshot: RosSnapshot, rulebook=None) -> list[FeatureHit]:
    rules = default_rulebook() if rulebook is None else rulebook
    hits = []
    for rule in sorted(rules, key=lambda r: r.id):
        for name in _candidates(snapshot, rule.match_on):
            if rule.matches(name):
                hits.append(FeatureHit(rule.id, rule.label, rule.kind, name))
    return hits


def detect_simulator(snapshot: RosSnapshot, hits) -> bool:
    if any(h.kind == "Simulator" for h in hits):
        return True
    for name in snapshot.params():
        low = name.lower()
        if any(s in low for s in SIM_PARAM_SUBSTRINGS):
            return True
        if any(tok in _tokens(low) for tok in SIM_PARAM_TOKENS):
            return True
    return False


def is_empty_core(snapshot: RosSnapshot) -> bool:
    if snapshot.system_state is None:
        return False
    return snapshot.topics() <= BASE_TOPICS and snapshot.services() <= BASE_SERVICES


def categorize(snapshot: RosSnapshot, hits) -> HostCategory:
    if is_empty_core(snapshot):
        return HostCategory.EMPTY_CORE
    if detect_simulator(snapshot, hits):
        return HostCategory.SIMULATION_ONLY
    kinds = {h.kind for h in hits}
    sensor, actuator = "Sensor" in kinds, "Actuator" in kinds
    if sensor and actuator:
        return HostCategory.IDENTIFIED_ROBOT
    if sensor:
        return HostCategory.ONLY_SENSORS
    if actuator:
        return HostCategory.ONLY_ACTUATORS
    if kinds & {"Library", "RobotType"}:
        return HostCategory.ONLY_IDENTIFIED_SERVICES
    return HostCategory.UNCLASSIFIED


def map_distro(ros_comm_version: str | None) -> str:
    if not ros_comm_version:
        return "unknown"
    version = ros_comm_version.strip()
    for prefix, name in DISTRO_PREFIXES:
        if version.startswith(prefix):
            return name
    return f"unknown({version})"


def extract_robot_types(snapshot: RosSnapshot, rulebook=None) -> list[str]:
    rules = [r for r in (default_rulebook() if rulebook is None else rulebook) if r.kind == "RobotType"]
    return sorted({h.label for h in match_rules(snapshot, rules)})


@dataclass
class Classification:
    hits: list
    category: HostCategory
    simulator: bool
    distro: str
    robot_types: list


def classify(snapshot: RosSnapshot, rulebook=None) -> Classification:
    hits = match_rules(snapshot, rulebook)
    return Classification(
        hits=hits,
        category=categorize(snapshot, hits),
        simulator=detect_simulator(snapshot, hits),
        distro=map_distro(snapshot.ros_comm_version),
        robot_types=sorted({h.label for h in hits if h.kind == "RobotType"}),
    )
