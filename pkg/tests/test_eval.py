import dataclasses
import json

import numpy as np
import pytest

from solo9.evaluation import (STRAIGHT, UNDEFINED, EvalProtocol, ProtocolError, ScriptedTwist,
                              eval_disturbance, eval_steering, eval_survival, evaluate,
                              group_stats, load_protocol, run_episodes, turning_radius)


def short(name, **kw):
    base = dict(n_episodes=2, n_groups=5, duration=1.0)
    base.update(kw)
    return dataclasses.replace(load_protocol(name), **base)


def test_shipped_protocols():
    st = load_protocol("steering")
    assert st.kind == "steering" and st.lin_vel == 0.6 and st.yaw_rates == [-0.4]
    t3 = load_protocol("tableIII")
    assert t3.kind == "disturbance" and sorted(t3.push_magnitudes) == [0.5, 0.7, 1.0]
    assert t3.table3_mode and t3.duration == 15.0 and t3.push_interval == 0.0
    t2 = load_protocol("table2")
    assert t2.terrain == "uneven" and t2.terrain_amplitude == 0.035
    steps = load_protocol("table2_steps")
    assert steps.step_heights == [0.025, 0.0275, 0.029]
    for p in (st, t3, t2, steps):
        assert p.n_groups >= 5 and p.duration == 15.0


def test_protocol_errors(tmp_path):
    with pytest.raises(ProtocolError):
        EvalProtocol(kind="steering", duration=1.0, steady_start=2.0).validate()
    with pytest.raises(ProtocolError):
        load_protocol("no_such_protocol")
    with pytest.raises(ProtocolError):
        EvalProtocol(kind="dance").validate()
    with pytest.raises(ProtocolError):
        EvalProtocol(kind="disturbance", table3_mode=True, push_magnitudes=[0.5]).validate()
    p = tmp_path / "x.toml"
    p.write_text('kind = "terrain"\nbogus = 1\n')
    with pytest.raises(ProtocolError):
        load_protocol(p)


def test_scripted_twist_radius():
    for v, w in [(0.6, -0.4), (0.3, 0.25), (1.0, 2.0)]:
        rep = eval_steering(ScriptedTwist(v, w), load_protocol("steering"))
        assert abs(rep.turning_radius - v / abs(w)) < 1e-6
        assert rep.mean_speed == pytest.approx(v, abs=1e-12)


def test_scripted_twist_trajectory_is_a_circle():
    t, pos, vel, _ = ScriptedTwist(0.6, -0.4).trajectory(15.0, 1 / 48)
    center = np.array([0.0, 0.6 / -0.4])
    r = np.linalg.norm(pos[:, :2] - center, axis=1)
    np.testing.assert_allclose(r, 1.5, atol=1e-12)
    # positions integrate the velocities
    np.testing.assert_allclose(np.gradient(pos[:, 0], t), vel[:, 0], atol=1e-3)


def test_radius_markers():
    assert turning_radius([0.5, 0.5], [0.001, -0.001]) == STRAIGHT
    assert turning_radius([], []) == UNDEFINED
    rep = eval_steering(ScriptedTwist(0.6, 0.0), short("steering", yaw_rates=[0.0], duration=3.0))
    assert rep.turning_radius == STRAIGHT


def test_report_arithmetic():
    outcomes = np.array([1, 0, 1, 1, 0, 0, 1, 1, 1, 0], dtype=bool)
    rate, std, groups = group_stats(outcomes, 5)
    assert rate == outcomes.sum() / len(outcomes)
    manual = [np.mean(outcomes[2 * i:2 * i + 2]) for i in range(5)]
    assert groups == manual and std == pytest.approx(np.std(manual), abs=1e-15)


def test_zero_policy_survives_flat_ground():
    rep = eval_survival(None, short("table2", terrain="flat", duration=2.0, n_episodes=1))
    assert rep.survival_rate == 1.0
    assert 0.0 <= rep.survival_rate <= 1.0 and len(rep.group_rates) == 5


def test_uneven_amplitude_zero_equals_flat():
    a = eval_survival(None, short("table2", terrain_amplitude=0.0))
    b = eval_survival(None, short("table2", terrain="flat"))
    assert a.outcomes == b.outcomes and a.mean_episode_time == b.mean_episode_time


def test_protocol_determinism():
    p = short("table3", push_magnitudes=[0.5], table3_mode=False)
    a, b = eval_disturbance(None, p), eval_disturbance(None, p)
    assert a.by_magnitude == b.by_magnitude


def test_zero_push_reduces_to_flat():
    p = short("table3", push_magnitudes=[0.0], table3_mode=False)
    flat = short("table2", terrain="flat", lin_vel=p.lin_vel, yaw_rates=p.yaw_rates)
    assert eval_disturbance(None, p).survival_rate == eval_survival(None, flat).survival_rate


def test_variant_wiring():
    p = short("table2", terrain="flat", n_episodes=1, n_groups=1, duration=0.2)
    fixed = run_episodes(None, dataclasses.replace(p, variant="solo9_fixed"), 1, 0)
    assert fixed["nj"] == 8 and not fixed["spec"].has_waist
    assert fixed["spec"].joint("waist").type == "fixed"
    free = run_episodes(lambda o: np.ones((len(o), 9)),
                        dataclasses.replace(p, variant="solo9_free"), 2, 0)
    assert free["nj"] == 9 and free["spec"].has_waist
    assert np.all(free["torques"][:, free["spec"].waist_index] == 0.0)
    assert np.any(free["torques"] != 0.0)


def test_steering_logs_and_report_file(tmp_path):
    rep = eval_steering(None, short("steering", n_episodes=1, n_groups=2, duration=2.5),
                        log_dir=tmp_path)
    assert len(rep.trajectory_logs) == 1
    out = rep.write(tmp_path / "r.json")
    data = json.loads(out.read_text())
    assert data["protocol"]["lin_vel"] == 0.6 and "yaw_rmse" in data


def test_all_fall_gives_undefined_radius():
    # a violent constant action knocks every episode over
    p = short("steering", duration=3.0, n_episodes=1, n_groups=2)
    rep = evaluate(lambda o: np.full((len(o), 9), 4.0), p)
    assert rep.survival_rate == 0.0 and rep.turning_radius == UNDEFINED
