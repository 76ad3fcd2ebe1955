"""Reward kernels.  All functions are pure and broadcast over leading env axes."""

import numpy as np


def reward_angvel(v_cmd, v_wz, c_angvel, sigma=0.25, mode="tracking"):
    """Yaw-rate tracking term ``c * exp(-(v_cmd - v_wz)^2 / sigma^2)``.

    ``mode="positive_exponent"`` evaluates ``c * exp(+(v_cmd - v_wz)^2)`` instead,
    which grows with the error; it is kept only for comparison runs.
    """
    err2 = np.square(np.asarray(v_cmd, dtype=float) - np.asarray(v_wz, dtype=float))
    if mode == "tracking":
        return c_angvel * np.exp(-err2 / sigma ** 2)
    if mode == "positive_exponent":
        return c_angvel * np.exp(err2)
    raise ValueError(f"unknown angvel reward mode {mode!r}")


def reward_slip(contact, v_xy, c_slip):
    """``c * sum_i C_i |v_xy,i|^2`` over the four feet (last axes: 4 and 4x2)."""
    speed2 = np.square(np.asarray(v_xy, dtype=float)).sum(axis=-1)
    return c_slip * (np.asarray(contact, dtype=float) * speed2).sum(axis=-1)


def reward_clearance(p_z, v_xy, p_z_max, c_clear):
    """``c * sum_i (p_z,i - p_z_max)^2 |v_xy,i|^2``."""
    speed2 = np.square(np.asarray(v_xy, dtype=float)).sum(axis=-1)
    return c_clear * (np.square(np.asarray(p_z, dtype=float) - p_z_max) * speed2).sum(axis=-1)


def reward_smooth(q_target, q_target_prev, c_smooth):
    """``c * |q_target - q_target_prev|^2``."""
    d = np.asarray(q_target, dtype=float) - np.asarray(q_target_prev, dtype=float)
    return c_smooth * np.square(d).sum(axis=-1)


def task_reward(r_G, r_C, r_Tu):
    return r_C + r_G + r_Tu


def total_reward(r_I, r_G, r_C, r_Tu, w_I):
    """Convex mix of imitation and task rewards."""
    if not 0.0 <= w_I <= 1.0:
        raise ValueError("w_I must lie in [0, 1]")
    return w_I * r_I + (1.0 - w_I) * task_reward(r_G, r_C, r_Tu)


# -- gait terms -----------------------------------------------------------

def reward_linvel(v_cmd, v_x, c_linvel, sigma=0.25):
    """Forward-speed tracking, same kernel shape as the yaw-rate term."""
    return c_linvel * np.exp(-np.square(np.asarray(v_cmd) - np.asarray(v_x)) / sigma ** 2)


def reward_air_time(first_contact, air_time, c_air, target=0.25):
    """Paid on touchdown: ``c * sum_i first_i (t_air,i - target)``."""
    return c_air * (np.asarray(first_contact, float) * (np.asarray(air_time) - target)).sum(axis=-1)


def reward_torque(torques, c_torque):
    return c_torque * np.square(torques).sum(axis=-1)


def reward_base_height(height, target, c_height):
    return c_height * np.square(np.asarray(height) - target)
