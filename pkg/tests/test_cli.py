import asyncio
import json
import socket
import subprocess
import sys

import pytest

from conftest import ROSOUT, fresh_hosts, ros_report
from fixture_scans import reference_record
from rosint import cli
from rosint.cli import EXIT_EXPOSED, EXIT_OK, EXIT_USAGE, main
from rosint.mock import Fixture
from rosint.store import ScanRecord, load_scan, save_scan

ROBOT_TOPICS = [{"name": "/cmd_vel", "publishers": [], "subscribers": ["/base"]},
                {"name": "/odom", "publishers": ["/base"], "subscribers": []},
                {"name": "/camera/rgb/image_raw", "publishers": ["/cam"], "subscribers": []}]


@pytest.fixture
def no_network(monkeypatch):
    """Fail loudly if anything opens a connection."""
    attempts = []

    def refuse(*args, **kwargs):
        attempts.append(args)
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)
    monkeypatch.setattr(asyncio, "open_connection", refuse)
    return attempts


def targets_file(tmp_path, lines, name="targets.txt"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_scan_mock_fleet_writes_record(make_fleet, tmp_path, capsys):
    hosts = fresh_hosts(5)
    make_fleet([Fixture("master", hosts[0], topics=ROBOT_TOPICS,
                        params={"/rosversion": "1.12.14", "/rosdistro": "kinetic"}),
                Fixture("tarpit", hosts[1]), Fixture("plain-http", hosts[2]),
                Fixture("honeypot", hosts[3], behaviors=["slow:200"]), Fixture("closed", hosts[4])])
    out = tmp_path / "scan.jsonl"
    code = main(["scan", "--targets", targets_file(tmp_path, [f"{h}/32" for h in hosts]),
                 "--out", str(out), "--seed", "3", "--rate", "200", "--timeout-ms", "800", "-q"])
    assert code == EXIT_OK
    record = load_scan(out)
    assert record.finalized and len(record.host_reports) == 5
    by_addr = {r.target.address: r for r in record.host_reports}
    assert by_addr[hosts[0]].category.value == "IdentifiedRobot"
    assert by_addr[hosts[1]].disposition == "tarpit"
    assert by_addr[hosts[2]].disposition == "not-xmlrpc"
    assert by_addr[hosts[3]].disposition == "http-timeout"
    assert by_addr[hosts[4]].disposition == "closed"
    assert record.config["seed"] == 3 and record.config["port"] == 11311
    printed = capsys.readouterr().out
    assert "1 ROS instances" in printed and "Kinetic" in printed


def test_scan_rosbridge_mode_defaults_to_9090(make_fleet, tmp_path):
    (h,) = fresh_hosts(1)
    fleet = make_fleet([Fixture("rosbridge", h, topics=["/rosout", "/scan"])])
    out = tmp_path / "rb.jsonl"
    assert main(["scan", "--targets", targets_file(tmp_path, [h]), "--mode", "rosbridge",
                 "--out", str(out), "--seed", "1", "-q"]) == EXIT_OK
    (report,) = load_scan(out).host_reports
    assert report.target.port == 9090 and report.snapshot is not None
    assert load_scan(out).config["port"] == 9090
    assert {e.port for e in fleet.servers[0].request_log.entries("connect")} == {9090}


def test_public_target_refused_before_any_packet(tmp_path, no_network, capsys):
    targets = targets_file(tmp_path, ["8.8.8.0/24"])
    code = main(["scan", "--targets", targets, "--out", str(tmp_path / "x.jsonl")])
    assert code == EXIT_USAGE
    assert no_network == []
    err = capsys.readouterr().err
    assert "--i-have-authorization" in err and "--notice-url" in err and "--blocklist" in err
    assert not (tmp_path / "x.jsonl").exists()


def test_public_target_needs_every_guardrail(tmp_path, no_network, capsys):
    targets = targets_file(tmp_path, ["8.8.8.0/24"])
    code = main(["scan", "--targets", targets, "--i-have-authorization", "--notice-url", "https://x.example/"])
    assert code == EXIT_USAGE and "--blocklist" in capsys.readouterr().err
    assert no_network == []


def test_guardrail_accepts_private_and_loopback():
    from rosint.addressing import TargetSpec

    cli.check_guardrail(TargetSpec(["10.0.0.0/8", "192.168.1.0/24", "127.0.0.1/32", "172.20.0.0/16"]),
                        False, None, None)
    with pytest.raises(cli.UsageError):
        cli.check_guardrail(TargetSpec(["172.32.0.0/16"]), False, None, None)
    cli.check_guardrail(TargetSpec(["1.2.3.0/24"]), True, "https://x.example/", "/dev/null")


def test_notice_url_in_user_agent(make_fleet, tmp_path):
    (h,) = fresh_hosts(1)
    fleet = make_fleet([Fixture("plain-http", h)])
    main(["scan", "--targets", targets_file(tmp_path, [h]), "--out", str(tmp_path / "s.jsonl"),
          "--notice-url", "https://scanner.example/about", "-q"])
    (entry,) = fleet.servers[0].request_log.entries("http")
    path, agent = entry.args
    assert path == "/" and agent.endswith("(+https://scanner.example/about)")


def test_config_file_then_flags(tmp_path, make_fleet):
    (h,) = fresh_hosts(1)
    make_fleet([Fixture("closed", h)])
    config = tmp_path / "cfg.json"
    out = tmp_path / "from-config.jsonl"
    config.write_text(json.dumps({"targets": targets_file(tmp_path, [h]), "rate": 50, "seed": 9,
                                  "out": str(out)}))
    assert main(["scan", "--config", str(config), "--rate", "80", "-q"]) == EXIT_OK
    cfg = load_scan(out).config
    assert cfg["rate"] == 80 and cfg["seed"] == 9


def test_config_unknown_key(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"rat": 5}))
    assert main(["scan", "--config", str(config)]) == EXIT_USAGE
    assert "rat" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main(["scan"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["scan", "--mode", "telnet"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE
    assert main(["report", str(tmp_path / "missing.jsonl")]) == EXIT_USAGE


def test_audit_exposed_master(make_fleet, capsys):
    (h,) = fresh_hosts(1)
    fleet = make_fleet([Fixture("master", h, topics=ROBOT_TOPICS)])
    assert main(["audit", h]) == EXIT_EXPOSED
    out = capsys.readouterr().out
    assert f"{h}: EXPOSED: ROS master port open, XML-RPC fingerprint positive" in out
    # stages 1-3 only: no XML-RPC call reaches the master
    assert fleet.servers[0].request_log.entries("xmlrpc") == []


def test_audit_exposed_rosbridge(make_fleet, capsys):
    (h,) = fresh_hosts(1)
    fleet = make_fleet([Fixture("rosbridge", h)])
    assert main(["audit", h]) == EXIT_EXPOSED
    assert f"{h}: EXPOSED: Rosbridge port open, WebSocket handshake accepted" in capsys.readouterr().out
    assert fleet.servers[0].request_log.entries("ws-message") == []


def test_audit_all_closed(capsys):
    assert main(["audit", "127.250.0.0/30"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1] == "no exposure detected"


def test_audit_mixed_range_table(make_fleet, capsys):
    make_fleet([Fixture("master", "127.251.0.1"), Fixture("rosbridge", "127.251.0.2"),
                Fixture("tarpit", "127.251.0.3")])
    assert main(["audit", "127.251.0.0/30"]) == EXIT_EXPOSED
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["host", "11311", "xml-rpc", "9090", "websocket"]
    rows = {line.split()[0]: line.split()[1:] for line in lines[2:6]}
    assert rows["127.251.0.0"] == ["closed", "-", "closed", "-"]
    assert rows["127.251.0.1"] == ["open", "positive", "closed", "-"]
    assert rows["127.251.0.2"] == ["closed", "-", "open", "positive"]
    assert rows["127.251.0.3"] == ["open", "tarpit", "open", "tarpit"]
    assert len([line for line in lines if "EXPOSED" in line]) == 2


def test_audit_public_address_refused(no_network):
    assert main(["audit", "8.8.8.8"]) == EXIT_USAGE
    assert no_network == []


def stored(tmp_path, name, *reports):
    path = tmp_path / name
    save_scan(path, ScanRecord(name, "0" * 16, 0.0, 1.0, list(reports), finalized=True))
    return str(path)


def test_report_offline(tmp_path, no_network, capsys):
    path = tmp_path / "ref.jsonl"
    save_scan(path, reference_record())
    assert main(["report", str(path), "--json"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["total"] == 102
    assert summary["distros"] == {"Hydro": 26, "Indigo/Jade": 26, "Kinetic": 25, "Lunar": 25}
    assert main(["report", str(path)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "ROS versions" in text and "Indigo/Jade" in text
    assert no_network == []


def test_classify_with_updated_rulebook_offline(tmp_path, no_network, capsys):
    record = stored(tmp_path, "a.jsonl", ros_report("10.0.0.1", ["/widget_feed"]))
    rules = tmp_path / "rules.jsonl"
    rules.write_text(json.dumps({"id": "lib.widget", "kind": "Library", "label": "WidgetFeed",
                                 "match_on": "topic", "pattern": "widget_feed"}) + "\n")
    out = tmp_path / "b.jsonl"
    assert main(["classify", record, "--rulebook", str(rules), "--out", str(out), "--json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["categories"]["OnlyIdentifiedServices"] == 1
    assert load_scan(out).host_reports[0].category.value == "OnlyIdentifiedServices"
    assert load_scan(record).host_reports[0].category.value == "Unclassified"
    assert no_network == []


def test_bad_rulebook_is_usage_error(tmp_path):
    record = stored(tmp_path, "a.jsonl", ros_report("10.0.0.1", ["/x"]))
    rules = tmp_path / "rules.jsonl"
    rules.write_text("{not json\n")
    assert main(["classify", record, "--rulebook", str(rules)]) == EXIT_USAGE


def test_diff_persistence_counts_offline(tmp_path, no_network, capsys):
    potato = ["/roslaunch/uris/host_potato__46636"]
    a = stored(tmp_path, "a.jsonl", ros_report("10.0.0.1", list(ROSOUT), potato),
               ros_report("10.0.0.2", ["/odom", "/scan"]), ros_report("10.0.0.3", ["/x"]))
    b = stored(tmp_path, "b.jsonl", ros_report("10.0.0.7", ["/gazebo/model_states"], potato),
               ros_report("10.0.0.2", ["/odom", "/scan"]), ros_report("10.0.0.4", ["/y"]))
    assert main(["diff", a, b]) == EXIT_OK
    out = capsys.readouterr().out
    assert "appeared: 1" in out and "disappeared: 1" in out and "persisted: 1" in out
    assert "category changed: 1" in out and "EmptyCore -> SimulationOnly" in out
    assert "1 scan(s): 2, 2 scan(s): 2" in out
    assert main(["diff", a, b, a, "--json"]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["persistence"]["presence_counts"] == {"1": 1, "2": 1, "3": 2}
    assert no_network == []


def test_mock_command_serves_spec(tmp_path):
    spec = tmp_path / "fleet.jsonl"
    spec.write_text(json.dumps({"kind": "honeypot", "host": "127.252.0.1"}) + "\n")
    proc = subprocess.run([sys.executable, "-m", "rosint", "mock", "--spec", str(spec), "--duration", "0.2"],
                          capture_output=True, text=True, timeout=30)
    assert proc.returncode == 0
    assert proc.stdout.split() == ["honeypot", "127.252.0.1", "11311"]


def test_mock_command_refuses_non_loopback(tmp_path):
    spec = tmp_path / "fleet.jsonl"
    spec.write_text(json.dumps({"kind": "master", "host": "10.9.9.9"}) + "\n")
    assert main(["mock", "--spec", str(spec), "--duration", "0"]) == EXIT_USAGE


def test_console_script_version():
    proc = subprocess.run([sys.executable, "-m", "rosint", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip().startswith("rosint ")
