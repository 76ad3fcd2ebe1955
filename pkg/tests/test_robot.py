import numpy as np
import pytest

from solo9.physics import ArticulatedModel
from solo9.robot import (RobotSpecError, dump_robot_spec, load_robot_spec, make_solo8_from_solo9,
                         parse_robot_spec)


@pytest.fixture(scope="module")
def solo9():
    return load_robot_spec("solo9")


def test_solo9_config(solo9):
    assert solo9.n_actuated == 9
    assert solo9.body_length == 0.465
    assert solo9.body_width == 0.31
    assert solo9.total_mass == 2.3
    assert solo9.has_waist


def test_solo8_config():
    s = load_robot_spec("solo8")
    assert s.n_actuated == 8
    assert s.total_mass == 1.9
    assert s.body_length == 0.428


def test_tree_property(solo9):
    assert len(solo9.joints) == len(solo9.links) - 1
    order = solo9.topological_order()
    assert sorted(order) == list(range(len(solo9.links)))
    assert order[0] == 0 and solo9.links[0].name == "front_base"


def test_mass_bookkeeping(solo9):
    assert abs(sum(link.mass for link in solo9.links) - solo9.total_mass) <= 1e-9


def test_waist_joint_invariants(solo9):
    waist = solo9.joint("waist")
    assert waist.limits is None
    assert waist.torque_limit == 2 * solo9.motor_torque_limit
    assert waist.axis == (1.0, 0.0, 0.0)


def test_round_trip(solo9):
    assert parse_robot_spec(dump_robot_spec(solo9)) == solo9


def test_file_load(tmp_path, solo9):
    path = tmp_path / "robot.toml"
    path.write_text(dump_robot_spec(solo9))
    assert load_robot_spec(path) == solo9


def test_waist_limits_rejected(solo9):
    text = dump_robot_spec(solo9).replace(
        'torque_limit = 5.4\n', 'torque_limit = 5.4\nlimits = [-1.0, 1.0]\n')
    with pytest.raises(RobotSpecError) as err:
        parse_robot_spec(text)
    assert err.value.invariant == "unlimited_waist"


def test_waist_torque_must_be_doubled(solo9):
    text = dump_robot_spec(solo9).replace("torque_limit = 5.4", "torque_limit = 2.7")
    with pytest.raises(RobotSpecError) as err:
        parse_robot_spec(text)
    assert err.value.invariant == "waist_double_torque"


def test_parse_error_reports_line():
    with pytest.raises(RobotSpecError) as err:
        parse_robot_spec('[robot]\nname = "x"\nmass = = 3\n')
    assert err.value.line == 3


def test_missing_field_named():
    with pytest.raises(RobotSpecError) as err:
        parse_robot_spec('[robot]\nname = "x"\n')
    assert err.value.field == "link"
    text = dump_robot_spec(load_robot_spec("solo9")).replace('base_split = "rear_base"\n', "")
    with pytest.raises(RobotSpecError) as err:
        parse_robot_spec(text)
    assert err.value.field == "robot.base_split"


def test_mass_mismatch_rejected(solo9):
    text = dump_robot_spec(solo9).replace("total_mass = 2.3", "total_mass = 2.4")
    with pytest.raises(RobotSpecError) as err:
        parse_robot_spec(text)
    assert err.value.invariant == "mass_bookkeeping"


def test_weld_preserves_masses(solo9):
    welded = make_solo8_from_solo9(solo9)
    assert welded.n_actuated == 8
    assert [link.mass for link in welded.links] == [link.mass for link in solo9.links]
    assert welded.total_mass == solo9.total_mass


def test_weld_zero_pose_kinematics_match(solo9):
    welded = make_solo8_from_solo9(solo9)
    m9, m8 = ArticulatedModel(solo9), ArticulatedModel(welded)
    q9 = np.zeros(9)
    s9 = m9.make_state(q=q9)
    s8 = m8.make_state(q=np.delete(q9, solo9.waist_index))
    k9, k8 = m9.kinematics(s9), m8.kinematics(s8)
    np.testing.assert_array_equal(k9.o, k8.o)
    np.testing.assert_array_equal(k9.R, k8.R)


def test_double_weld_raises(solo9):
    with pytest.raises(RobotSpecError):
        make_solo8_from_solo9(make_solo8_from_solo9(solo9))
