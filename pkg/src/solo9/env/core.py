"""Vectorized quadruped environment: observations, actions, rewards, termination, resets."""

from __future__ import annotations

import numpy as np

from ..dataset import DEFAULT_WAIST_INDEX, base_normal, extract_discriminator_obs
from ..physics import ArticulatedModel, ContactParams, flat_terrain, generate_terrain
from ..physics import rotations as rot
from ..physics.terrain import curriculum_terrain
from ..robot import RobotSpec
from . import rewards as R
from .config import ActionConfig, EnvConfig, TerminationConfig
from .randomization import CurriculumState, curriculum_update, randomize_env

ACTOR_BLOCKS = ("base_quat", "commands", "q", "qdot", "q_prev")


def obs_dims(n_joints):
    actor = 4 + 2 + 3 * n_joints
    return actor, actor + 3


def build_observations(state, cmd, q_prev):
    """Actor observation ``[quat(4), cmd(2), q, qdot, q_prev]`` and the critic
    observation, which appends the base-frame linear velocity."""
    actor = np.concatenate([state.base_quat, cmd, state.q, state.qdot, q_prev], axis=-1)
    v_body = rot.quat_rotate_inverse(state.base_quat, state.base_linvel)
    return actor, np.concatenate([actor, v_body], axis=-1)


def apply_action(a, q, qdot, cfg: ActionConfig, default_pose, torque_limit, kp=None, kd=None):
    """Map raw policy actions to clamped joint torques.

    Returns ``(torques, q_target)``; ``q_target`` is None in direct-torque mode.
    """
    a = np.clip(np.asarray(a, dtype=float), -cfg.clip, cfg.clip)
    if cfg.mode == "direct_torque":
        return np.clip(torque_limit * a, -torque_limit, torque_limit), None
    kp = cfg.kp if kp is None else np.asarray(kp)[..., None]
    kd = cfg.kd if kd is None else np.asarray(kd)[..., None]
    q_target = default_pose + cfg.scale * a
    tau = kp * (q_target - q) - kd * qdot
    return np.clip(tau, -torque_limit, torque_limit), q_target


def check_termination(model: ArticulatedModel, state, cfg: TerminationConfig, episode_time):
    """Per-env ``alive``, ``fallen`` and ``timeout`` flags."""
    roll, pitch, _ = rot.rpy_from_quat(state.base_quat)
    fallen = (model.base_height(state) < cfg.min_base_height) | \
        (np.abs(roll) > cfg.max_tilt) | (np.abs(pitch) > cfg.max_tilt)
    if cfg.nonfoot_contact:
        fallen |= model.nonfoot_contact(state)
    timeout = ~fallen & (episode_time >= cfg.episode_length - 1e-9)
    return {"alive": ~fallen & ~timeout, "fallen": fallen, "timeout": timeout}


def make_terrain(cfg: EnvConfig):
    sim = cfg.sim
    if sim.terrain == "flat":
        return flat_terrain(), None
    if sim.terrain == "curriculum":
        return curriculum_terrain(cfg.curriculum.terrain_levels, sim.terrain_amplitude,
                                  tile=cfg.curriculum.tile, seed=sim.terrain_seed)
    params = {"amplitude": sim.terrain_amplitude} if sim.terrain == "uneven" else {}
    return generate_terrain(sim.terrain, params, seed=sim.terrain_seed, size=sim.terrain_size), None


class QuadrupedEnv:
    """``n_envs`` robots stepped in lockstep at the control rate.

    ``free_waist`` zeroes the waist torque while keeping the joint free.
    Episodes that end are reset automatically inside ``step``.
    """

    def __init__(self, spec: RobotSpec, n_envs=1, cfg: EnvConfig | None = None, seed=0,
                 free_waist=False, terrain=None):
        self.cfg = cfg = (cfg or EnvConfig()).validate()
        self.spec = spec
        self.n = n_envs
        self.rng = np.random.default_rng(seed)
        if terrain is None:
            terrain, centers = make_terrain(cfg)
        else:
            centers = None
        self.tile_centers = centers
        contact = ContactParams(stiffness=cfg.sim.stiffness, damping=cfg.sim.damping,
                                friction=cfg.sim.friction)
        self.model = ArticulatedModel(spec, n_envs, contact, terrain)
        self.nj = self.model.nj
        self.actor_dim, self.critic_dim = obs_dims(self.nj)
        self.dt = cfg.sim.control_dt
        self.free_waist = free_waist
        self.torque_mask = np.ones(self.nj)
        if free_waist:
            if spec.waist_index is None:
                raise ValueError("free_waist needs an actuated waist joint")
            self.torque_mask[spec.waist_index] = 0.0
        self._pad_waist = self.nj == 8
        cur = cfg.curriculum
        max_t = cur.terrain_levels - 1 if centers is not None else 0
        self.curriculum = CurriculumState.zeros(n_envs, max_t, cur.pd_levels - 1)
        self.trunk = np.array(self.model.trunk_links)
        self.spawn = np.zeros((n_envs, 3))
        self.cmd = np.zeros((n_envs, 2))
        self.episode_time = np.zeros(n_envs)
        self.q_prev = np.zeros((n_envs, self.nj))
        self.q_target_prev = np.tile(self.model.default_pose, (n_envs, 1))
        self.air_time = np.zeros((n_envs, 4))
        self.last_contact = np.zeros((n_envs, 4), dtype=bool)
        self.last_torques = np.zeros((n_envs, self.nj))
        self.command_override = None
        self.state = self.model.make_state()
        self.reset()

    # -- gains and spawning --------------------------------------------------
    def gains(self):
        cur, act = self.cfg.curriculum, self.cfg.action
        if not cur.enabled or cur.pd_levels == 1:
            return np.full(self.n, act.kp), np.full(self.n, act.kd)
        frac = self.curriculum.pd_gain_level / (cur.pd_levels - 1)
        kp = cur.kp_range[0] + frac * (cur.kp_range[1] - cur.kp_range[0])
        kd = cur.kd_range[0] + frac * (cur.kd_range[1] - cur.kd_range[0])
        return kp, kd

    def _spawn_xy(self, ids):
        if self.tile_centers is None:
            return np.zeros((len(ids), 2))
        return self.tile_centers[self.curriculum.terrain_level[ids]]

    # -- reset -----------------------------------------------------------------
    def reset(self, env_ids=None):
        ids = np.arange(self.n) if env_ids is None else np.asarray(env_ids, dtype=int)
        if len(ids) == 0:
            return self.observations()
        m = self.model
        m.reset_params(ids)
        cfg = self.cfg
        if cfg.randomization.enabled:
            trunk_mass = m.base_mass[self.trunk]
            smp = randomize_env(cfg.randomization, len(ids), self.rng, trunk_mass)
            m.friction[ids] = cfg.sim.friction * smp["friction"]
            for li in self.trunk:
                m.mass[ids, li] += smp["base_mass"] / len(self.trunk)
                m.com[ids, li] += smp["com_offset"]
            joint_scale = smp["joint_scale"]
            cmd = np.stack([smp["lin_vel_cmd"], smp["ang_vel_cmd"]], axis=1)
        else:
            joint_scale = np.ones(len(ids))
            cmd = np.zeros((len(ids), 2))
        if self.command_override is not None:
            cmd[:] = self.command_override
        self.cmd[ids] = cmd
        q0 = m.default_pose[None] * joint_scale[:, None]
        xy = self._spawn_xy(ids)
        ground = m.terrain.height(xy[:, 0], xy[:, 1])
        z = ground + m.standing_height() + 0.01
        s = self.state
        s.base_pos[ids] = np.column_stack([xy, z])
        s.base_quat[ids] = [1.0, 0.0, 0.0, 0.0]
        s.base_linvel[ids] = 0.0
        s.base_angvel[ids] = 0.0
        s.q[ids] = q0
        s.qdot[ids] = 0.0
        s.time[ids] = 0.0
        s.contact_history[ids] = False
        s.contact_forces[ids] = 0.0
        s.contact_anchors[ids] = np.nan
        m.refresh(s)
        self.spawn[ids] = s.base_pos[ids]
        self.episode_time[ids] = 0.0
        self.q_prev[ids] = q0
        self.q_target_prev[ids] = m.default_pose
        self.air_time[ids] = 0.0
        self.last_contact[ids] = False
        self.last_torques[ids] = 0.0
        return self.observations()

    def set_commands(self, lin_vel, ang_vel):
        """Pin commands for all current and future episodes (evaluation mode)."""
        self.command_override = np.array([lin_vel, ang_vel], dtype=float)
        self.cmd[:] = self.command_override

    # -- observation views -------------------------------------------------------
    def observations(self):
        return build_observations(self.state, self.cmd, self.q_prev)

    def frames(self, state=None, extra=False):
        """Current state as 9-DOF dataset frame vectors (waist padded with 0 on 8-DOF robots)."""
        s = self.state if state is None else state
        q, qdot = s.q, s.qdot
        if self._pad_waist:
            q = np.insert(q, DEFAULT_WAIST_INDEX, 0.0, axis=1)
            qdot = np.insert(qdot, DEFAULT_WAIST_INDEX, 0.0, axis=1)
        parts = [s.base_pos, s.base_quat, s.base_linvel, s.base_angvel, base_normal(s.base_quat),
                 self.model.base_height(s)[:, None], q, qdot]
        if extra:
            parts.append(s.foot_positions.reshape(self.n, 12))
        return np.concatenate(parts, axis=1)

    def discriminator_obs(self, state=None):
        return extract_discriminator_obs(self.frames(state), 9)

    # -- stepping -----------------------------------------------------------------
    def step(self, actions):
        """Advance one control step.

        Returns ``(actor_obs, critic_obs, terms, done, info)``.  ``terms``
        holds the per-env reward groups ``r_G``, ``r_C``, ``r_Tu`` and their
        components; mixing with the imitation reward happens in the trainer.
        ``info`` carries the pre-reset critic observation and discriminator
        observation of finished envs plus the termination flags.
        """
        m, cfg = self.model, self.cfg
        actions = np.asarray(actions, dtype=float)
        bad_action = ~np.all(np.isfinite(actions), axis=1)
        actions = np.where(bad_action[:, None], 0.0, actions)
        kp, kd = self.gains()
        q_before = self.state.q.copy()
        tau, q_target = apply_action(actions, self.state.q, self.state.qdot, cfg.action,
                                     m.default_pose, m.torque_limit, kp, kd)
        tau = tau * self.torque_mask
        per_substep = cfg.action.mode == "pd_target" and cfg.action.pd_every_substep
        failed = bad_action.copy()
        state = self.state
        tau_sum = np.zeros_like(tau)
        for k in range(cfg.sim.decimation):
            if per_substep and k:
                tau = apply_action(actions, state.q, state.qdot, cfg.action, m.default_pose,
                                   m.torque_limit, kp, kd)[0] * self.torque_mask
            tau_sum += tau
            new = m.step(state, tau, cfg.sim.substep, check=False)
            bad = ~(np.all(np.isfinite(new.base_linvel), axis=1)
                    & np.all(np.isfinite(new.base_angvel), axis=1)
                    & np.all(np.isfinite(new.qdot), axis=1)
                    & np.all(np.isfinite(new.base_pos), axis=1))
            if bad.any():
                for name in ("base_pos", "base_quat", "base_linvel", "base_angvel", "q", "qdot",
                             "contact_history", "contact_forces", "contact_anchors"):
                    getattr(new, name)[bad] = getattr(state, name)[bad]
                m.refresh(new)
                failed |= bad
            state = new
        self.state = state
        self.episode_time += self.dt
        tau = tau_sum / cfg.sim.decimation
        self.last_torques = tau

        terms = self._rewards(q_target, tau)
        self.q_prev = q_before
        if q_target is not None:
            self.q_target_prev = q_target
        term = check_termination(m, state, cfg.termination, self.episode_time)
        fallen = term["fallen"] | failed
        done = fallen | term["timeout"]
        terms["r_fall"] = cfg.rewards.c_fall * fallen
        terms["r_G"] = terms["r_G"] + terms["r_fall"]

        actor, critic = self.observations()
        final_frames = self.frames(extra=True)
        info = {"fallen": fallen, "timeout": term["timeout"], "failed": failed,
                "final_critic_obs": critic.copy(), "final_frames": final_frames,
                "final_disc_obs": extract_discriminator_obs(final_frames[:, :-12], 9),
                "walked": np.linalg.norm(state.base_pos[:, :2] - self.spawn[:, :2], axis=1),
                "episode_time": self.episode_time.copy(), "torques": tau}
        ids = np.flatnonzero(done)
        if len(ids):
            if cfg.curriculum.enabled:
                target = np.maximum(self.cmd[ids, 0] * self.episode_time[ids],
                                    cfg.curriculum.min_target)
                self.curriculum = curriculum_update(self.curriculum, info["walked"][ids], target,
                                                    ids, self.rng)
            actor, critic = self.reset(ids)
        return actor, critic, terms, done, info

    def _rewards(self, q_target, tau):
        m, s, w = self.model, self.state, self.cfg.rewards
        feet = m.foot_kinematics(s)
        contact = feet["contact"]
        yaw_rate = s.base_angvel[:, 2]
        v_body = rot.quat_rotate_inverse(s.base_quat, s.base_linvel)
        r_Tu = R.reward_angvel(self.cmd[:, 1], yaw_rate, w.c_angvel, w.sigma_angvel, w.angvel_mode)
        r_slip = R.reward_slip(contact, feet["v_xy"], w.c_slip)
        r_clear = R.reward_clearance(feet["p_z"], feet["v_xy"], w.p_z_max, w.c_clear)
        if q_target is not None:
            r_smooth = R.reward_smooth(q_target, self.q_target_prev, w.c_smooth)
        else:
            r_smooth = R.reward_smooth(tau, self.last_torques, w.c_smooth)
        self.air_time += self.dt
        first = contact & ~self.last_contact
        moving = np.abs(self.cmd[:, 0]) > 0.1
        r_air = R.reward_air_time(first, self.air_time, w.c_air, w.air_time_target) * moving
        self.air_time[contact] = 0.0
        self.last_contact = contact
        r_lin = R.reward_linvel(self.cmd[:, 0], v_body[:, 0], w.c_linvel, w.sigma_linvel)
        r_tq = R.reward_torque(tau, w.c_torque)
        r_h = R.reward_base_height(m.base_height(s), w.height_target, w.c_height)
        r_C = r_slip + r_clear + r_smooth
        r_G = r_lin + r_air + r_tq + r_h
        return {"r_G": r_G, "r_C": r_C, "r_Tu": r_Tu, "r_slip": r_slip, "r_clear": r_clear,
                "r_smooth": r_smooth, "r_linvel": r_lin, "r_air": r_air, "r_torque": r_tq,
                "r_height": r_h, "yaw_rate": yaw_rate, "v_x": v_body[:, 0]}
