"""Linking ROS hosts across scans.

Two bases, tried in order:

* hostname: roslaunch registers ``/roslaunch/uris/host_<machine>__<port>``
  on the parameter server, which names the machine independently of its IP
* ip+similarity: same address and a topic-set Jaccard index at or above a
  threshold

A machine name seen on more than one host within a single scan is
ambiguous and never used as a matching key.
"""

from __future__ import annotations

import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

from .model import HostReport

ROSLAUNCH_URI = re.compile(r"^/roslaunch/uris/host_(.+)__(\d+)$")
DEFAULT_THRESHOLD = 0.5
HOSTNAME = "hostname"
IP_SIMILARITY = "ip+similarity"


@dataclass(frozen=True, order=True)
class MachineName:
    name: str
    source_param: str


def extract_machine_names(param_names) -> set[MachineName]:
    # the greedy (.+) leaves only the last "__<digits>" for the port
    out = set()
    for param in param_names or ():
        m = ROSLAUNCH_URI.match(param)
        if m:
            out.add(MachineName(m.group(1), param))
    return out


def topic_similarity(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


@dataclass(frozen=True)
class MatchResult:
    left: str
    right: str
    basis: str
    similarity: Optional[float] = None

    def to_dict(self):
        return {"left": self.left, "right": self.right, "basis": self.basis,
                "similarity": self.similarity}


def _ros_hosts(scan) -> list[HostReport]:
    reports = getattr(scan, "host_reports", scan)
    return [r for r in reports if r.snapshot is not None]


def _names(report: HostReport) -> set[str]:
    return {m.name for m in extract_machine_names(report.snapshot.param_names)}


def ambiguous_names(scan) -> dict[str, list[str]]:
    """Machine names claimed by more than one host in one scan, with the hosts."""
    owners = defaultdict(list)
    for report in _ros_hosts(scan):
        for name in _names(report):
            owners[name].append(report.record_id)
    return {n: sorted(ids) for n, ids in sorted(owners.items()) if len(ids) > 1}


def match_hosts(scan_a, scan_b, threshold: float = DEFAULT_THRESHOLD) -> list[MatchResult]:
    """Partial one-to-one matching of the ROS hosts of two scans."""
    hosts_a, hosts_b = _ros_hosts(scan_a), _ros_hosts(scan_b)
    skip_a, skip_b = set(ambiguous_names(hosts_a)), set(ambiguous_names(hosts_b))
    names_a = {r.record_id: _names(r) for r in hosts_a}
    names_b = {r.record_id: _names(r) for r in hosts_b}
    topics_a = {r.record_id: r.snapshot.topics() for r in hosts_a}
    topics_b = {r.record_id: r.snapshot.topics() for r in hosts_b}

    by_name = defaultdict(list)
    for r in hosts_b:
        for n in names_b[r.record_id] - skip_b:
            by_name[n].append(r.record_id)
    candidates = set()
    for r in hosts_a:
        for n in names_a[r.record_id] - skip_a:
            for other in by_name.get(n, ()):
                candidates.add((r.record_id, other))

    used_a, used_b, results = set(), set(), []

    def take(pairs, basis):
        scored = [(topic_similarity(topics_a[a], topics_b[b]), a, b) for a, b in pairs]
        scored.sort(key=lambda t: (-t[0], t[1], t[2]))
        for sim, a, b in scored:
            if a in used_a or b in used_b:
                continue
            if basis == IP_SIMILARITY and sim < threshold:
                continue
            used_a.add(a)
            used_b.add(b)
            results.append(MatchResult(a, b, basis, sim))

    take(candidates, HOSTNAME)

    addr_b = defaultdict(list)
    for r in hosts_b:
        addr_b[r.target.address].append(r)
    ip_pairs = []
    for r in hosts_a:
        for other in addr_b.get(r.target.address, ()):
            na, nb = names_a[r.record_id], names_b[other.record_id]
            if na and nb and not (na & nb):
                # two different named machines that happen to share an address
                continue
            ip_pairs.append((r.record_id, other.record_id))
    take(ip_pairs, IP_SIMILARITY)
    return results


@dataclass
class Cluster:
    members: list  # (scan index, record id), sorted
    names: list
    categories: list  # per scan: category value or None when absent

    @property
    def presence(self) -> int:
        return len({idx for idx, _ in self.members})

    @property
    def category_changed(self) -> bool:
        seen = {c for c in self.categories if c is not None}
        return len(seen) > 1

    def to_dict(self):
        return {"members": [[i, rid] for i, rid in self.members], "names": self.names,
                "categories": self.categories, "presence": self.presence,
                "category_changed": self.category_changed}


@dataclass
class PersistenceReport:
    scan_count: int
    clusters: list
    presence_counts: dict  # k -> number of clusters seen in exactly k scans
    category_changed: list
    ambiguities: list  # (scan index, name, record ids)
    matches: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "scan_count": self.scan_count,
            "presence_counts": {str(k): v for k, v in sorted(self.presence_counts.items())},
            "category_changed": [c.to_dict() for c in self.category_changed],
            "ambiguities": [{"scan": i, "name": n, "hosts": ids} for i, n, ids in self.ambiguities],
            "clusters": [c.to_dict() for c in self.clusters],
            "matches": {f"{i}-{j}": [m.to_dict() for m in ms] for (i, j), ms in sorted(self.matches.items())},
        }


def persistence_report(scans, threshold: float = DEFAULT_THRESHOLD) -> PersistenceReport:
    """Cluster hosts across every pair of scans and count how often each is seen."""
    hosts = [_ros_hosts(s) for s in scans]
    parent = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x, y):
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)

    for i, reports in enumerate(hosts):
        for r in reports:
            parent[(i, r.record_id)] = (i, r.record_id)

    matches = {}
    for i, j in combinations(range(len(hosts)), 2):
        found = match_hosts(hosts[i], hosts[j], threshold)
        matches[(i, j)] = found
        for m in found:
            union((i, m.left), (j, m.right))

    index = {(i, r.record_id): r for i, reports in enumerate(hosts) for r in reports}
    groups = defaultdict(list)
    for node in parent:
        groups[find(node)].append(node)

    clusters = []
    for members in groups.values():
        members.sort()
        categories = [None] * len(hosts)
        names = set()
        for i, rid in members:
            report = index[(i, rid)]
            names |= _names(report)
            if report.category is not None:
                categories[i] = report.category.value
        clusters.append(Cluster(members, sorted(names), categories))
    clusters.sort(key=lambda c: c.members)

    presence = Counter(c.presence for c in clusters)
    ambiguities = [(i, name, ids) for i, reports in enumerate(hosts)
                   for name, ids in ambiguous_names(reports).items()]
    return PersistenceReport(
        scan_count=len(hosts),
        clusters=clusters,
        presence_counts={k: presence.get(k, 0) for k in range(1, len(hosts) + 1)},
        category_changed=[c for c in clusters if c.category_changed],
        ambiguities=ambiguities,
        matches=matches,
    )
