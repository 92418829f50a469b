"""Append-only scan records and the summaries built from them.

A record file is JSON lines.  Line 1 is a header carrying the schema
version, scan id and config hash; each following ``host`` line is one
HostReport; a closing ``end`` line marks the scan finalized.  Every line is
written with a single ``write`` on an ``O_APPEND`` descriptor, so a crash
can at worst leave one partial line at the end, which ``load_scan`` skips
with a warning.
"""

from __future__ import annotations

import errno
import hashlib
import json
import os
import time
import uuid
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import classify
from .errors import Finalized, SerializationError, StorageFull
from .identity import DEFAULT_THRESHOLD, match_hosts
from .model import CATEGORY_TITLES, HostCategory, HostReport

SCHEMA = "rosint.scan/1"


class TruncatedRecordWarning(UserWarning):
    """The final line of a record file was cut short and has been skipped."""


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ScanRecord:
    scan_id: str
    config_hash: str
    started_at: float
    ended_at: Optional[float] = None
    host_reports: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    finalized: bool = False
    warnings: list = field(default_factory=list)

    def ros_hosts(self) -> list[HostReport]:
        return [r for r in self.host_reports if r.snapshot is not None]


def _write_line(fd: int, obj: dict):
    try:
        line = json.dumps(obj, sort_keys=True, allow_nan=False) + "\n"
    except (TypeError, ValueError) as exc:
        raise SerializationError(str(exc)) from None
    data = line.encode("utf-8")
    try:
        written = os.write(fd, data)
    except OSError as exc:
        if exc.errno in (errno.ENOSPC, errno.EDQUOT):
            raise StorageFull(str(exc)) from None
        raise
    if written != len(data):
        raise StorageFull(f"short write: {written} of {len(data)} bytes")


class ScanWriter:
    """Single writer for one scan file."""

    def __init__(self, path, scan_id: str | None = None, config: dict | None = None,
                 started_at: float | None = None, fsync: bool = False,
                 hash_override: str | None = None):
        self.path = Path(path)
        self.scan_id = scan_id or uuid.uuid4().hex[:12]
        self.config = dict(config or {})
        self.config_hash = hash_override or config_hash(self.config)
        self.started_at = time.time() if started_at is None else started_at
        self.fsync = fsync
        self.count = 0
        self.finalized = False
        self._fd = os.open(self.path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC | os.O_APPEND, 0o644)
        _write_line(self._fd, {"type": "header", "schema": SCHEMA, "scan_id": self.scan_id,
                               "config_hash": self.config_hash, "started_at": self.started_at,
                               "config": self.config})

    def append(self, report: HostReport):
        if self.finalized:
            raise Finalized(f"scan {self.scan_id} already finalized")
        _write_line(self._fd, {"type": "host", "report": report.to_dict()})
        if self.fsync:
            os.fsync(self._fd)
        self.count += 1

    def finalize(self, ended_at: float | None = None):
        if self.finalized:
            raise Finalized(f"scan {self.scan_id} already finalized")
        _write_line(self._fd, {"type": "end", "ended_at": time.time() if ended_at is None else ended_at,
                               "count": self.count})
        os.fsync(self._fd)
        os.close(self._fd)
        self.finalized = True

    def close(self):
        if not self.finalized:
            os.close(self._fd)
            self.finalized = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if not self.finalized:
            self.finalize()


def append(record_file, host_report: HostReport):
    """Append to an existing, unfinalized record file."""
    path = Path(record_file)
    lines = path.read_bytes().splitlines()
    if not lines:
        raise SerializationError(f"{path}: no header line")
    try:
        last = json.loads(lines[-1])
    except json.JSONDecodeError:
        last = {}
    if last.get("type") == "end":
        raise Finalized(f"{path}: scan already finalized")
    fd = os.open(path, os.O_WRONLY | os.O_APPEND)
    try:
        _write_line(fd, {"type": "host", "report": host_report.to_dict()})
    finally:
        os.close(fd)


def load_scan(path) -> ScanRecord:
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    record: ScanRecord | None = None
    for i, line in enumerate(lines):
        try:
            obj = json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            if i == len(lines) - 1:
                msg = f"{path}: skipped truncated final line {i + 1} ({len(line)} bytes)"
                warnings.warn(msg, TruncatedRecordWarning, stacklevel=2)
                if record is not None:
                    record.warnings.append(msg)
                break
            raise SerializationError(f"{path}:{i + 1}: corrupt line: {exc}") from None
        kind = obj.get("type")
        if i == 0:
            if kind != "header" or obj.get("schema") != SCHEMA:
                raise SerializationError(f"{path}: missing or unsupported header")
            record = ScanRecord(obj["scan_id"], obj["config_hash"], obj["started_at"],
                                config=obj.get("config", {}))
        elif kind == "host":
            record.host_reports.append(HostReport.from_dict(obj["report"]))
        elif kind == "end":
            record.ended_at = obj["ended_at"]
            record.finalized = True
    if record is None:
        raise SerializationError(f"{path}: empty record file")
    return record


def save_scan(path, record: ScanRecord):
    writer = ScanWriter(path, record.scan_id, record.config, record.started_at,
                        hash_override=record.config_hash)
    for report in record.host_reports:
        writer.append(report)
    if record.finalized:
        writer.finalize(record.ended_at)
    else:
        writer.close()


# -- summaries ------------------------------------------------------------

DISTRO_ORDER = ("Hydro", "Indigo/Jade", "Kinetic", "Lunar")


@dataclass
class SummaryTables:
    categories: dict  # category value -> count, fixed order
    total: int
    distros: dict  # distro name -> count
    labels: dict  # label -> {"kind", "physical", "simulator"}
    funnel: dict  # disposition -> count
    hosts_seen: int

    def to_dict(self):
        return {"categories": self.categories, "total": self.total, "distros": self.distros,
                "labels": self.labels, "funnel": self.funnel, "hosts_seen": self.hosts_seen}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def reclassify(record: ScanRecord, rulebook) -> ScanRecord:
    """Recompute hits and categories offline with another rulebook."""
    reports = []
    for r in record.host_reports:
        r = HostReport.from_dict(r.to_dict())
        if r.snapshot is not None:
            result = classify.classify(r.snapshot, rulebook)
            r.hits, r.category = result.hits, result.category
        reports.append(r)
    return ScanRecord(record.scan_id, record.config_hash, record.started_at, record.ended_at,
                      reports, record.config, record.finalized, list(record.warnings))


def summarize(record: ScanRecord, rulebook=None) -> SummaryTables:
    if rulebook is not None:
        record = reclassify(record, rulebook)
    categories = {c.value: 0 for c in HostCategory}
    distros: Counter = Counter()
    labels: dict = {}
    funnel = Counter(r.disposition for r in record.host_reports)
    for report in record.ros_hosts():
        if report.category is not None:
            categories[report.category.value] += 1
        distros[classify.map_distro(report.snapshot.ros_comm_version)] += 1
        column = "simulator" if classify.detect_simulator(report.snapshot, report.hits) else "physical"
        kinds = {}
        for hit in report.hits:
            kinds.setdefault(hit.label, hit.kind)
        for label, kind in kinds.items():
            row = labels.setdefault(label, {"kind": kind, "physical": 0, "simulator": 0})
            row[column] += 1
    ordered_distros = {d: distros.pop(d, 0) for d in DISTRO_ORDER}
    ordered_distros.update(sorted(distros.items()))
    return SummaryTables(
        categories=categories,
        total=sum(categories.values()),
        distros=ordered_distros,
        labels=dict(sorted(labels.items(), key=lambda kv: (kv[1]["kind"], kv[0]))),
        funnel=dict(sorted(funnel.items())),
        hosts_seen=len(record.host_reports),
    )


def render_table(headers, rows) -> list[str]:
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(str(c))) for w, c in zip(widths, row)]

    def fmt(row):
        cells = [str(c).rjust(w) if isinstance(c, (int, float)) else str(c).ljust(w)
                 for c, w in zip(row, widths)]
        return "  ".join(cells).rstrip()

    return [fmt(headers), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]


def render_text(summary: SummaryTables) -> str:
    titles = {c.value: CATEGORY_TITLES[c] for c in HostCategory}
    out = ["Scan results"]
    rows = [(titles[k], v) for k, v in summary.categories.items()]
    rows.append(("Total instances", summary.total))
    out += render_table(("Category", "Hosts"), rows)
    out += ["", "ROS versions"]
    out += render_table(("Distribution", "Hosts"), list(summary.distros.items()))
    out += ["", "Topic and parameter search results"]
    rows = [(label, row["kind"], row["physical"], row["simulator"]) for label, row in summary.labels.items()]
    out += render_table(("Label", "Kind", "Phys. HW", "Sim./Log"), rows)
    out += ["", "Funnel"]
    out += render_table(("Disposition", "Hosts"), list(summary.funnel.items()))
    return "\n".join(out) + "\n"


# -- cross-scan -------------------------------------------------------------

@dataclass
class DiffReport:
    appeared: list
    disappeared: list
    persisted: list  # (left id, right id) with unchanged category
    category_changed: list  # (left id, right id, old category, new category)

    def to_dict(self):
        return {
            "appeared": self.appeared,
            "disappeared": self.disappeared,
            "persisted": [list(p) for p in self.persisted],
            "category_changed": [list(c) for c in self.category_changed],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def diff(scan_a: ScanRecord, scan_b: ScanRecord, matches=None,
         threshold: float = DEFAULT_THRESHOLD) -> DiffReport:
    if matches is None:
        matches = match_hosts(scan_a, scan_b, threshold)
    cat_a = {r.record_id: r.category for r in scan_a.ros_hosts()}
    cat_b = {r.record_id: r.category for r in scan_b.ros_hosts()}
    persisted, changed = [], []
    for m in sorted(matches, key=lambda m: (m.left, m.right)):
        old, new = cat_a.get(m.left), cat_b.get(m.right)
        if old == new:
            persisted.append((m.left, m.right))
        else:
            changed.append((m.left, m.right, old.value if old else None, new.value if new else None))
    left = {m.left for m in matches}
    right = {m.right for m in matches}
    return DiffReport(
        appeared=sorted(set(cat_b) - right),
        disappeared=sorted(set(cat_a) - left),
        persisted=persisted,
        category_changed=changed,
    )


def render_diff(report: DiffReport) -> str:
    out = [f"appeared: {len(report.appeared)}", f"disappeared: {len(report.disappeared)}",
           f"persisted: {len(report.persisted)}", f"category changed: {len(report.category_changed)}"]
    for left, right, old, new in report.category_changed:
        out.append(f"  {left} -> {right}: {old} -> {new}")
    return "\n".join(out) + "\n"
