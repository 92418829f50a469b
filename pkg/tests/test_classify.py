import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from classifier_cases import CASES, build
from conftest import ROSOUT, ROSOUT_SERVICES, snapshot
from rosint import classify
from rosint.classify import (
    Rule,
    categorize,
    default_rulebook,
    detect_simulator,
    extract_robot_types,
    load_rulebook,
    map_distro,
    match_rules,
    parse_rules,
    parse_urdf_summary,
)
from rosint.errors import RulebookError
from rosint.model import HostCategory, Transport

NAMED_TERMS = [
    "depth_registered", "velodyne", "point_cloud", "baro", "biotac", "compass", "odom", "odometry",
    "joy", "joystick", "microphone", "camera_info", "image", "joint_trajectory", "trajectory_controller",
    "action_controller", "gripper", "sound_play", "heartbeat", "MotorCommand", "inceptor_command",
    "flystate2phidgetsanalog", "gazebo", "unity", "torcs_ros", "use_sim_time", "fake", "rosbridge",
    "move_group", "apriltag", "ar_track_alvar", "master_discovery", "master_sync", "robot_position",
    "web_video_server",
]

SEARCH_TABLE_LABELS = [
    "Camera", "Camera + Depth", "Camera + RGB", "Camera + Stereo", "Kinect", "IMU", "Gyro", "Lidar",
    "Motion Capture", "Compass", "Odometry", "Pressure", "Contact", "biotac", "Velodyne", "point_cloud",
    "Force", "Radar", "Geolocation", "Audio", "Temperature", "Battery Monitor", "Printhead status",
    "Joystick", "Movable base", "Servo", "Lights", "Arm", "Gripper", "Flippers", "Sound", "Heartbeat",
    "Voice", "MotorCommand", "inceptor_command", "flystate2phidgetsanalog", "Emergency Stop", "Printhead",
    "Gazebo", "Unity", "Stageros", "torcs_ros", "Dreamview", "Playback", "Baxter", "PR2", "WAM", "JACO",
    "Turtlebot", "DaVinci", "Rosbridge", "RViz", "MoveIt!", "OpenRAVE", "Transform Library (tf)",
    "Fiducial Libraries", "ROS Tutorials", "master_discovery", "master_sync", "robot_position",
    "web_video_server",
]


@pytest.mark.parametrize("case", CASES, ids=[c[0] for c in CASES])
def test_ground_truth_case(case):
    result = classify.classify(build(case))
    assert {h.label for h in result.hits} == case[5]
    assert result.category.value == case[6]


def test_forty_cases_cover_every_named_term():
    assert len(CASES) == 40
    names = " ".join(" ".join(c[1]) + " " + " ".join(c[2]) + " " + " ".join(c[3] or []) for c in CASES)
    missing = [t for t in NAMED_TERMS if t.lower() not in names.lower()]
    assert not missing


def test_rulebook_closure():
    rules = default_rulebook()
    labels = {r.label for r in rules}
    assert not [label for label in SEARCH_TABLE_LABELS if label not in labels]
    patterns = " ".join(r.pattern.lower() for r in rules)
    assert not [t for t in NAMED_TERMS if t.lower() not in patterns]
    named = {r.pattern.lower() for r in rules if r.provenance == "named"}
    assert {"velodyne", "biotac", "gazebo", "use_sim_time", "fake"} <= named
    assert len({r.id for r in rules}) == len(rules)


def test_match_examples():
    hits = match_rules(snapshot(topics=["/velodyne_points"]))
    assert ("Sensor", "Lidar") in {(h.kind, h.label) for h in hits}
    hits = match_rules(snapshot(topics=["/biotac_pub"]))
    assert [(h.kind, h.label, h.matched_name) for h in hits] == [("Sensor", "biotac", "/biotac_pub")]
    hits = match_rules(snapshot(topics=["/flystate2phidgetsanalog"]))
    assert [h.kind for h in hits] == ["Actuator"]


def test_hit_order_is_rule_then_name():
    hits = match_rules(snapshot(topics=["/odom_b", "/odom_a", "/cmd_vel"]))
    keys = [(h.rule_id, h.matched_name) for h in hits]
    assert keys == sorted(keys)


def test_detect_simulator_examples():
    snap = snapshot(topics=["/gazebo/model_states"])
    assert detect_simulator(snap, match_rules(snap))
    snap = snapshot(params=["/use_sim_time"])
    assert detect_simulator(snap, match_rules(snap))
    snap = snapshot(topics=["/camera/image_raw"])
    assert not detect_simulator(snap, match_rules(snap))
    snap = snapshot(params=["/fakenews"])
    assert not detect_simulator(snap, match_rules(snap))


def test_category_examples():
    core = snapshot(topics=ROSOUT, services=ROSOUT_SERVICES)
    assert categorize(core, match_rules(core)) is HostCategory.EMPTY_CORE
    robot = snapshot(topics=["/camera/image_raw", "/cmd_vel"])
    assert categorize(robot, match_rules(robot)) is HostCategory.IDENTIFIED_ROBOT
    sim = snapshot(topics=["/camera/image_raw", "/gazebo/link_states"])
    assert categorize(sim, match_rules(sim)) is HostCategory.SIMULATION_ONLY


def test_core_with_extra_service_is_not_empty():
    snap = snapshot(topics=ROSOUT, services=list(ROSOUT_SERVICES) + ["/my_node/do_it"])
    assert categorize(snap, match_rules(snap)) is HostCategory.UNCLASSIFIED


def test_bridge_snapshot_is_accepted():
    snap = snapshot(topics=["/cmd_vel", "/camera/image_raw"], transport=Transport.ROSBRIDGE)
    assert classify.classify(snap).category is HostCategory.IDENTIFIED_ROBOT


@pytest.mark.parametrize("version,distro", [
    ("1.10.12", "Hydro"), ("1.11.21", "Indigo/Jade"), ("1.12.14", "Kinetic"), ("1.13.6", "Lunar"),
    ("2.0.0", "unknown(2.0.0)"), (None, "unknown"), (" 1.12.7\n", "Kinetic"),
])
def test_map_distro(version, distro):
    assert map_distro(version) == distro


def test_robot_types():
    baxter = snapshot(urdf='<robot name="baxter"><link name="a"/><joint name="j"/></robot>')
    assert extract_robot_types(baxter) == ["Baxter"]
    pr2 = snapshot(topics=["/pr2_controller_manager/list_controllers"])
    assert extract_robot_types(pr2) == ["PR2"]
    assert extract_robot_types(snapshot()) == []


def test_urdf_summary():
    s = parse_urdf_summary('<robot name="wam"><link name="a"/><link name="b"/><joint name="j"/></robot>')
    assert (s.name, s.links, s.joints) == ("wam", 2, 1)
    assert parse_urdf_summary("<notrobot/>") is None
    assert parse_urdf_summary("<<<") is None
    assert parse_urdf_summary('<!DOCTYPE r [<!ENTITY x "y">]><robot name="&x;"/>') is None


def test_rulebook_validation(tmp_path):
    with pytest.raises(RulebookError):
        Rule("a", "Sensor", "X", "topic", "")
    with pytest.raises(RulebookError):
        Rule("a", "Widget", "X", "topic", "x")
    with pytest.raises(RulebookError):
        Rule("a", "Sensor", "X", "topic", "(", mode="regex")
    line = '{"id": "a", "kind": "Sensor", "label": "X", "match_on": "topic", "pattern": "x"}'
    with pytest.raises(RulebookError):
        parse_rules([line, line])
    f = tmp_path / "rules.jsonl"
    f.write_text("# custom\n" + line + "\n")
    assert [r.id for r in load_rulebook(f)] == ["a"]


def test_custom_rulebook_changes_result():
    rules = parse_rules(['{"id": "s.x", "kind": "Sensor", "label": "Widget", "match_on": "topic", "pattern": "widget"}'])
    snap = snapshot(topics=["/widget/out"])
    assert classify.classify(snap).category is HostCategory.UNCLASSIFIED
    assert classify.classify(snap, rules).category is HostCategory.ONLY_SENSORS


@pytest.mark.parametrize("mode,pattern,name,expected", [
    ("substring", "odom", "/base/odometry", True),
    ("token", "image", "/cam/image_raw", True),
    ("token", "image", "/cam/images", False),
    ("segment", "fake", "/fake/x", True),
    ("segment", "fake", "/fake_x", False),
    ("exact", "/tf", "/tf", True),
    ("exact", "/tf", "/tf_static", False),
    ("regex", "^/robot/limb/", "/robot/limb/left", True),
    ("substring", "MotorCommand", "/motorcommand", True),
])
def test_rule_modes(mode, pattern, name, expected):
    assert Rule("t", "Sensor", "L", "topic", pattern, mode).matches(name) is expected


topic_names = st.lists(st.from_regex(r"/[a-z_]{1,12}(/[a-z_0-9]{1,10}){0,2}", fullmatch=True), max_size=8)


@settings(max_examples=200, deadline=None)
@given(topic_names, topic_names, st.lists(st.sampled_from(["/use_sim_time", "/fake_x", "/run_id", "/fakenews"]), max_size=2))
def test_monotone_total_and_sim_precedence(topics, extra, params):
    base = snapshot(topics=topics, params=params)
    grown = snapshot(topics=topics + extra, params=params)
    base_hits = set(match_rules(base))
    assert base_hits <= set(match_rules(grown))
    for snap in (base, grown):
        hits = match_rules(snap)
        category = categorize(snap, hits)
        assert isinstance(category, HostCategory)
        if detect_simulator(snap, hits) and category is not HostCategory.EMPTY_CORE:
            assert category is HostCategory.SIMULATION_ONLY
        if detect_simulator(snap, hits):
            assert category not in (HostCategory.IDENTIFIED_ROBOT, HostCategory.ONLY_SENSORS,
                                    HostCategory.ONLY_ACTUATORS)
