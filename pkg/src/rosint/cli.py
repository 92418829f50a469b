"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 audit found an
exposed host.
"""

from __future__ import annotations

import argparse
import asyncio
import ipaddress
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__, classify, identity, store
from .addressing import TargetSpec, build_plan, read_cidr_file
from .errors import ConfigError, RosintError
from .master import DEFAULT_USER_AGENT
from .probe import Pipeline, PipelineConfig
from .probe_rules import load_probe_rules

log = logging.getLogger("rosint")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_EXPOSED = 0, 1, 2, 3

SAFE_NETWORKS = tuple(ipaddress.ip_network(n) for n in (
    "127.0.0.0/8", "10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16",
))

SCAN_DEFAULTS = {
    "targets": None,
    "blocklist": None,
    "mode": "master",
    "port": None,
    "rate": 100.0,
    "seed": None,
    "out": "scan.jsonl",
    "rulebook": None,
    "probe_rules": None,
    "timeout_ms": 3000,
    "max_in_flight": 100,
    "i_have_authorization": False,
    "notice_url": None,
    "rosbridge_tls": False,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def is_safe_range(network: ipaddress.IPv4Network) -> bool:
    return any(network.subnet_of(safe) for safe in SAFE_NETWORKS)


def check_guardrail(spec: TargetSpec, consent: bool, notice_url: str | None, blocklist: str | None):
    """Refuse public targets unless the operator opted in explicitly."""
    public = [str(n) for n in spec.include_ranges if not is_safe_range(n)]
    if not public:
        return
    missing = []
    if not consent:
        missing.append("--i-have-authorization")
    if not notice_url:
        missing.append("--notice-url")
    if not blocklist:
        missing.append("--blocklist (an empty file is accepted)")
    if missing:
        raise UsageError(
            f"targets outside loopback/private space ({', '.join(public[:3])}"
            f"{', ...' if len(public) > 3 else ''}) require {', '.join(missing)}")


def user_agent(notice_url: str | None) -> str:
    return f"{DEFAULT_USER_AGENT} (+{notice_url})" if notice_url else DEFAULT_USER_AGENT


def merge_config(args, defaults: dict) -> dict:
    """defaults < config file < flags given on the command line."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            merged[key] = value
    return merged


def _scan_config(cfg: dict, interrogate: bool = True) -> PipelineConfig:
    timeout = int(cfg["timeout_ms"])
    rules = load_probe_rules(cfg.get("probe_rules"))
    kwargs = dict(
        mode=cfg["mode"],
        connect_timeout_ms=min(timeout, 1000),
        http_timeout_ms=timeout,
        interrogate_timeout_ms=max(timeout, 5000),
        max_in_flight=int(cfg["max_in_flight"]),
        rate_limit=float(cfg["rate"]),
        user_agent=user_agent(cfg.get("notice_url")),
        rules=rules,
        rulebook=classify.load_rulebook(cfg["rulebook"]) if cfg.get("rulebook") else None,
        interrogate=interrogate,
        rosbridge_tls=bool(cfg.get("rosbridge_tls")),
    )
    if cfg.get("port"):
        kwargs["master_port" if cfg["mode"] == "master" else "rosbridge_port"] = int(cfg["port"])
    try:
        return PipelineConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


async def _run_scan(plan, pipe_cfg: PipelineConfig, writer: store.ScanWriter, quiet: bool):
    pipeline = Pipeline(pipe_cfg)
    total = plan.spec.effective_size()
    found = 0
    async for report in pipeline.run(plan):
        writer.append(report)
        if report.snapshot is not None:
            found += 1
            if not quiet:
                print(f"[{writer.count}/{total}] {report.record_id} {report.category.value}", file=sys.stderr)
    return found


def cmd_scan(args) -> int:
    cfg = merge_config(args, SCAN_DEFAULTS)
    if not cfg["targets"]:
        raise UsageError("--targets is required")
    if cfg["mode"] not in ("master", "rosbridge"):
        raise UsageError(f"--mode must be master or rosbridge, not {cfg['mode']!r}")
    pipe_cfg = _scan_config(cfg)
    try:
        spec = TargetSpec.from_files(cfg["targets"], cfg["blocklist"], pipe_cfg.scan_port)
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad target list: {exc}") from None
    check_guardrail(spec, cfg["i_have_authorization"], cfg["notice_url"], cfg["blocklist"])
    seed = cfg["seed"] if cfg["seed"] is not None else int(time.time())
    try:
        plan = build_plan(spec, int(seed))
    except RosintError as exc:
        raise UsageError(str(exc)) from None

    record_cfg = {k: cfg[k] for k in sorted(cfg)} | {"seed": seed, "port": pipe_cfg.scan_port}
    writer = store.ScanWriter(cfg["out"], config=record_cfg)
    try:
        found = asyncio.run(_run_scan(plan, pipe_cfg, writer, args.quiet))
    finally:
        if not writer.finalized:
            writer.finalize()
    print(f"scan {writer.scan_id}: {writer.count} hosts probed, {found} ROS instances, record {cfg['out']}")
    print(store.render_text(store.summarize(store.load_scan(cfg["out"]))), end="")
    return EXIT_OK


async def _audit(spec_master: TargetSpec, spec_bridge: TargetSpec, cfg: dict):
    results = {}
    for mode, spec in (("master", spec_master), ("rosbridge", spec_bridge)):
        pipe_cfg = _scan_config(cfg | {"mode": mode, "port": spec.port}, interrogate=False)
        plan = build_plan(spec, 0)
        async for report in Pipeline(pipe_cfg).run(plan):
            results.setdefault(report.target.address, {})[mode] = report
    return results


def _audit_cell(report) -> tuple[str, str]:
    port = report.outcomes.get("port")
    state = port.verdict.value if port else "?"
    if report.disposition == "fingerprint-positive":
        return state, "positive"
    if report.disposition == "tarpit":
        return state, "tarpit"
    if report.stage_reached >= 3:
        return state, report.disposition
    return state, "-"


def cmd_audit(args) -> int:
    cfg = dict(SCAN_DEFAULTS) | {"timeout_ms": args.timeout_ms, "rate": args.rate,
                                  "max_in_flight": args.max_in_flight,
                                  "notice_url": args.notice_url}
    try:
        spec_m = TargetSpec([args.address], port=args.master_port)
        spec_b = TargetSpec([args.address], port=args.rosbridge_port)
    except ValueError as exc:
        raise UsageError(f"bad address or range: {exc}") from None
    check_guardrail(spec_m, args.i_have_authorization, args.notice_url, args.blocklist or None)
    if args.blocklist:
        excluded = read_cidr_file(args.blocklist)
        spec_m = TargetSpec([args.address], excluded, args.master_port)
        spec_b = TargetSpec([args.address], excluded, args.rosbridge_port)
    if spec_m.effective_size() == 0:
        raise UsageError("every target address is blocklisted")
    results = asyncio.run(_audit(spec_m, spec_b, cfg))

    exposed = []
    rows = []
    for address in sorted(results, key=ipaddress.ip_address):
        m_state, m_fp = _audit_cell(results[address]["master"])
        b_state, b_fp = _audit_cell(results[address]["rosbridge"])
        rows.append((address, m_state, m_fp, b_state, b_fp))
        if m_fp == "positive":
            exposed.append(f"{address}: EXPOSED: ROS master port open, XML-RPC fingerprint positive")
        if b_fp == "positive":
            exposed.append(f"{address}: EXPOSED: Rosbridge port open, WebSocket handshake accepted")
    if len(rows) > 1 or args.table:
        headers = ("host", f"{args.master_port}", "xml-rpc", f"{args.rosbridge_port}", "websocket")
        print("\n".join(store.render_table(headers, rows)))
    for line in exposed:
        print(line)
    if not exposed:
        print("no exposure detected")
        return EXIT_OK
    return EXIT_EXPOSED


def _load(path):
    try:
        return store.load_scan(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def cmd_report(args) -> int:
    summary = store.summarize(_load(args.record))
    print(summary.to_json() if args.json else store.render_text(summary), end="\n" if args.json else "")
    return EXIT_OK


def cmd_classify(args) -> int:
    record = _load(args.record)
    rulebook = classify.load_rulebook(args.rulebook)
    updated = store.reclassify(record, rulebook)
    if args.out:
        store.save_scan(args.out, updated)
    summary = store.summarize(updated)
    print(summary.to_json() if args.json else store.render_text(summary), end="\n" if args.json else "")
    return EXIT_OK


def cmd_diff(args) -> int:
    records = [_load(p) for p in args.records]
    report = identity.persistence_report(records, args.threshold)
    if len(records) == 2:
        d = store.diff(records[0], records[1], report.matches[(0, 1)])
        if args.json:
            print(json.dumps({"diff": d.to_dict(), "persistence": report.to_dict()}, indent=2, sort_keys=True))
            return EXIT_OK
        print(store.render_diff(d), end="")
    elif args.json:
        print(json.dumps({"persistence": report.to_dict()}, indent=2, sort_keys=True))
        return EXIT_OK
    counts = ", ".join(f"{k} scan(s): {v}" for k, v in report.presence_counts.items())
    print(f"hosts seen in {counts}")
    print(f"hosts whose category changed: {len(report.category_changed)}")
    for i, name, ids in report.ambiguities:
        print(f"  ambiguous machine name {name!r} in scan {i}: {', '.join(ids)}")
    return EXIT_OK


def cmd_mock(args) -> int:
    from .mock import load_fleet_spec, spawn_fleet

    try:
        fixtures = load_fleet_spec(args.spec)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"bad fixture spec: {exc}") from None
    try:
        fleet = spawn_fleet(fixtures, allow_non_loopback=args.allow_non_loopback)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with fleet:
        for fx in fixtures:
            print(f"{fx.kind:<11} {fx.host} {','.join(map(str, fx.ports)) or '-'}", flush=True)
        try:
            if args.duration:
                time.sleep(args.duration)
            else:
                while True:
                    time.sleep(3600)
        except KeyboardInterrupt:
            pass
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rosint", description="Passive census of exposed ROS masters and Rosbridge servers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("scan", help="run the staged funnel over a target list")
    p.add_argument("--config", help="JSON file of scan settings; command-line flags win")
    p.add_argument("--targets", help="file of CIDR ranges, one per line")
    p.add_argument("--blocklist", help="file of CIDR ranges never to probe")
    p.add_argument("--mode", choices=("master", "rosbridge"))
    p.add_argument("--port", type=int, help="scan port (default 11311, or 9090 in rosbridge mode)")
    p.add_argument("--rate", type=float, help="probe ceiling per second (default 100)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="record file to write (default scan.jsonl)")
    p.add_argument("--rulebook")
    p.add_argument("--probe-rules", dest="probe_rules")
    p.add_argument("--timeout-ms", dest="timeout_ms", type=int)
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    p.add_argument("--i-have-authorization", dest="i_have_authorization", action="store_true")
    p.add_argument("--notice-url", dest="notice_url", help="URL explaining the scan, sent in the User-Agent")
    p.add_argument("--rosbridge-tls", dest="rosbridge_tls", action="store_true",
                   help="use wss:// for the Rosbridge handshake and interrogation")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("audit", help="check an address or range for exposed ROS ports (no interrogation)")
    p.add_argument("address", help="IPv4 address or CIDR range")
    p.add_argument("--master-port", type=int, default=11311)
    p.add_argument("--rosbridge-port", type=int, default=9090)
    p.add_argument("--timeout-ms", type=int, default=2000)
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--max-in-flight", type=int, default=64)
    p.add_argument("--blocklist")
    p.add_argument("--i-have-authorization", action="store_true")
    p.add_argument("--notice-url")
    p.add_argument("--table", action="store_true", help="print the per-host table even for one host")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("classify", help="re-run classification on a stored record")
    p.add_argument("record")
    p.add_argument("--rulebook")
    p.add_argument("--out", help="write the reclassified record here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("report", help="summary tables for a stored record")
    p.add_argument("record")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("diff", help="match hosts across two or more records")
    p.add_argument("records", nargs="+")
    p.add_argument("--threshold", type=float, default=identity.DEFAULT_THRESHOLD)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("mock", help="serve a fixture fleet on loopback")
    p.add_argument("--spec", required=True, help="JSON-lines fixture file")
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    p.add_argument("--allow-non-loopback", action="store_true")
    p.set_defaults(func=cmd_mock)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rosint: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, classify.RulebookError) as exc:
        print(f"rosint: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RosintError, OSError) as exc:
        print(f"rosint: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
