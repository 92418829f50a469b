"""Synthetic scan records built from the classifier cases."""

from itertools import cycle

from classifier_cases import CASES
from conftest import dead_report, ros_report
from rosint.store import ScanRecord

# reference category counts for a 102-host scan, in category order
REFERENCE_COUNTS = {"IdentifiedRobot": 12, "SimulationOnly": 21, "EmptyCore": 26, "OnlySensors": 18,
           "OnlyActuators": 3, "OnlyIdentifiedServices": 12, "Unclassified": 10}
VERSIONS = ("1.10.12", "1.11.21", "1.12.14", "1.13.6")


def reference_record(scan_id="reference") -> ScanRecord:
    reports, n = [], 0
    versions = cycle(VERSIONS)
    for category, count in REFERENCE_COUNTS.items():
        cases = cycle([c for c in CASES if c[6] == category])
        for _ in range(count):
            _, topics, params, services, robot, _, _ = next(cases)
            urdf = f'<robot name="{robot}"><link name="base"/></robot>' if robot else None
            n += 1
            extra = {} if services is None else {"services": services}
            reports.append(ros_report(f"10.3.{n // 250}.{n % 250 + 1}", topics, params, urdf=urdf,
                                      version=next(versions), **extra))
    # non-ROS hosts must not move any category count
    reports += [dead_report(f"10.9.0.{i}") for i in range(1, 6)]
    return ScanRecord(scan_id, "0" * 16, 1.0e9, 1.0e9 + 60, reports, finalized=True)
