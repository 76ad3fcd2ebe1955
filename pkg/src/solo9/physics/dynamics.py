"""Floating-base articulated dynamics with penalty contact, batched over envs.

Everything is expressed in world coordinates.  Spatial vectors are
``[angular; linear]`` with the linear part taken at the world origin, so no
per-link frame transforms are needed and the joint motion subspaces are
plain 6-vectors ``[a; o x a]``.

Generalized velocity layout: ``u = [omega_base (3), v_base (3), qdot (n)]``
where both base vectors are world-frame and ``v_base`` is the velocity of
the root link origin.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..robot import RobotSpec
from . import rotations as rot
from .terrain import Terrain, flat_terrain


class IntegrationError(FloatingPointError):
    pass


@dataclass
class ContactParams:
    stiffness: float = 4000.0  # N/m
    damping: float = 40.0  # N s/m
    tangential_stiffness: float = 4000.0  # N/m, stick spring to the contact anchor
    tangential_damping: float = 40.0  # N s/m
    friction: float = 1.0
    force_threshold: float = 0.1  # N, raw foot-contact threshold
    filter_window: int = 2  # substeps
    gravity: float = 9.81
    enabled: bool = True


@dataclass
class SimState:
    """Batched simulator state; every array has the env index as axis 0."""

    base_pos: np.ndarray
    base_quat: np.ndarray
    base_linvel: np.ndarray
    base_angvel: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    time: np.ndarray
    contact_history: np.ndarray  # (N, window, 4) raw foot contacts, newest last
    foot_contacts: np.ndarray = None  # (N, 4) filtered C_i
    foot_positions: np.ndarray = None  # (N, 4, 3) sole points, world
    foot_velocities: np.ndarray = None  # (N, 4, 3)
    contact_forces: np.ndarray = None  # (N, P, 3) probe forces of the last substep
    contact_anchors: np.ndarray = None  # (N, P, 2) stick anchors, NaN when not in contact
    _kin: object = field(default=None, repr=False, compare=False)

    @property
    def n_envs(self):
        return self.base_pos.shape[0]

    def copy(self):
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.copy() if isinstance(v, np.ndarray) else v
        return SimState(**out)

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if f.name != "_kin"}


@dataclass
class Kinematics:
    R: np.ndarray  # (N, L, 3, 3)
    o: np.ndarray  # (N, L, 3) link origins
    S: np.ndarray  # (N, L, 6) joint motion subspace (zero for root/fixed)
    S0: np.ndarray  # (N, 6, 6) root subspace
    c: np.ndarray  # (N, L, 3) link COMs
    Ic: np.ndarray  # (N, L, 3, 3) rotational inertia about COM, world axes
    I6: np.ndarray  # (N, L, 6, 6) spatial inertia at the world origin
    Js: np.ndarray  # (N, L, 6, nv) link spatial Jacobians
    probes: np.ndarray  # (N, P, 3) probe centres


def _cross(a, b):
    # np.cross spends most of its time in axis bookkeeping for small batches
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def _mv(A, x):
    return (A @ x[..., None])[..., 0]


def crm(v, m):
    """Spatial motion cross product v x m for (..., 6) arrays."""
    w, vl = v[..., :3], v[..., 3:]
    return np.concatenate([_cross(w, m[..., :3]),
                           _cross(w, m[..., 3:]) + _cross(vl, m[..., :3])], axis=-1)


def crf(v, f):
    """Spatial force cross product v x* f."""
    w, vl = v[..., :3], v[..., 3:]
    return np.concatenate([_cross(w, f[..., :3]) + _cross(vl, f[..., 3:]),
                           _cross(w, f[..., 3:])], axis=-1)


class ArticulatedModel:
    """A compiled robot: link tree, per-env inertial parameters, contact probes."""

    def __init__(self, spec: RobotSpec, n_envs=1, contact: ContactParams | None = None,
                 terrain: Terrain | None = None):
        self.spec = spec
        self.n_envs = n_envs
        self.contact = contact or ContactParams()
        self.terrain = terrain or flat_terrain()

        order = spec.topological_order()
        new_index = {old: new for new, old in enumerate(order)}
        self.links = [spec.links[i] for i in order]
        self.L = len(order)
        self.nj = spec.n_actuated
        self.nv = 6 + self.nj
        self.parent = np.full(self.L, -1)
        self.joint_axis = np.zeros((self.L, 3))
        self.joint_origin = np.zeros((self.L, 3))
        self.dof = np.full(self.L, -1)  # generalized-velocity column, -1 for root/fixed
        actuated = [j.name for j in spec.actuated_joints]
        for j in spec.joints:
            c = new_index[j.child]
            self.parent[c] = new_index[j.parent]
            self.joint_axis[c] = j.axis
            self.joint_origin[c] = j.origin
            if j.actuated:
                self.dof[c] = 6 + actuated.index(j.name)
        self._axis_K = rot.skew(self.joint_axis)
        self._axis_K2 = self._axis_K @ self._axis_K
        self.children = [[i for i in range(self.L) if self.parent[i] == k] for k in range(self.L)]
        self.ancestors = []
        for i in range(self.L):
            chain, k = [], self.parent[i]
            while k >= 0:
                chain.append(k)
                k = self.parent[k]
            self.ancestors.append(chain)

        self.base_mass = np.array([link.mass for link in self.links])
        self.base_com = np.array([link.com for link in self.links], dtype=float)
        self.base_inertia = np.array([link.inertia for link in self.links], dtype=float)
        self.mass = np.tile(self.base_mass, (n_envs, 1))
        self.com = np.tile(self.base_com, (n_envs, 1, 1))
        self.inertia = np.tile(self.base_inertia, (n_envs, 1, 1))
        self.friction = np.full(n_envs, self.contact.friction)

        act = spec.actuated_joints
        self.torque_limit = np.array([j.torque_limit for j in act])
        self.joint_damping = np.array([j.damping for j in act])
        self.default_pose = np.array([j.default for j in act])
        self.waist_dof = spec.waist_index
        self.trunk_links = [new_index[0], new_index[spec.base_split_index]]

        probe_link, probe_pos, probe_rad, foot_probe = [], [], [], []
        for li, link in enumerate(self.links):
            pts, radius = link.contact_points()
            for p in pts:
                if link.foot:
                    foot_probe.append(len(probe_link))
                probe_link.append(li)
                probe_pos.append(p)
                probe_rad.append(radius)
        self.probe_link = np.array(probe_link)
        self.probe_pos = np.array(probe_pos)
        self.probe_radius = np.array(probe_rad)
        self.foot_probes = np.array(foot_probe)
        self.is_foot_probe = np.zeros(len(probe_link), dtype=bool)
        self.is_foot_probe[self.foot_probes] = True
        self.P = len(probe_link)
        self._build_mirror_maps(actuated)

    def _build_mirror_maps(self, actuated):
        def swap(name):
            return (name.replace("L_", "#_").replace("R_", "L_").replace("#_", "R_")
                    if name[:2] in ("FL", "FR", "HL", "HR") else name)

        self.mirror_joint_perm = np.array([actuated.index(swap(nm)) for nm in actuated])
        self.mirror_joint_sign = np.array([-1.0 if nm == "waist" else 1.0 for nm in actuated])
        names = [self.links[li].name for li in self.probe_link]
        perm = []
        for i in range(self.P):
            target = swap(names[i])
            pos = self.probe_pos[i] * [1.0, -1.0, 1.0]
            match = [k for k in range(self.P)
                     if names[k] == target and np.allclose(self.probe_pos[k], pos)]
            perm.append(match[0] if match else i)
        self.mirror_probe_perm = np.array(perm)
        feet = [names[i] for i in self.foot_probes]
        self.mirror_foot_perm = np.array([feet.index(swap(f)) for f in feet])

    def mirror_state(self, state):
        """Reflect a state through the sagittal (x-z) plane."""
        flip = np.array([1.0, -1.0, 1.0])
        axial = np.array([-1.0, 1.0, -1.0])
        out = SimState(
            base_pos=state.base_pos * flip,
            base_quat=state.base_quat * [1.0, -1.0, 1.0, -1.0],
            base_linvel=state.base_linvel * flip,
            base_angvel=state.base_angvel * axial,
            q=state.q[:, self.mirror_joint_perm] * self.mirror_joint_sign,
            qdot=state.qdot[:, self.mirror_joint_perm] * self.mirror_joint_sign,
            time=state.time.copy(),
            contact_history=state.contact_history[:, :, self.mirror_foot_perm].copy(),
            contact_forces=state.contact_forces[:, self.mirror_probe_perm] * flip,
            contact_anchors=state.contact_anchors[:, self.mirror_probe_perm] * flip[:2],
        )
        return self.refresh(out)

    def mirror_torques(self, torques):
        return np.asarray(torques)[..., self.mirror_joint_perm] * self.mirror_joint_sign

    # -- parameters -------------------------------------------------------
    @property
    def total_mass(self):
        return self.mass.sum(axis=1)

    def reset_params(self, env_ids=None):
        ids = slice(None) if env_ids is None else env_ids
        self.mass[ids] = self.base_mass
        self.com[ids] = self.base_com
        self.inertia[ids] = self.base_inertia
        self.friction[ids] = self.contact.friction

    # -- state construction -----------------------------------------------
    def make_state(self, base_pos=None, base_quat=None, q=None, base_linvel=None,
                   base_angvel=None, qdot=None):
        n = self.n_envs

        def arr(v, shape, default):
            if v is None:
                return np.broadcast_to(np.asarray(default, dtype=float), shape).copy()
            return np.broadcast_to(np.asarray(v, dtype=float), shape).copy()

        state = SimState(
            base_pos=arr(base_pos, (n, 3), [0.0, 0.0, 0.5]),
            base_quat=arr(base_quat, (n, 4), [1.0, 0.0, 0.0, 0.0]),
            base_linvel=arr(base_linvel, (n, 3), 0.0),
            base_angvel=arr(base_angvel, (n, 3), 0.0),
            q=arr(q, (n, self.nj), self.default_pose),
            qdot=arr(qdot, (n, self.nj), 0.0),
            time=np.zeros(n),
            contact_history=np.zeros((n, self.contact.filter_window, 4), dtype=bool),
        )
        self.refresh(state)
        return state

    def refresh(self, state):
        """Recompute derived foot quantities after external edits of a state."""
        state._kin = None
        kin = self.kinematics(state)
        self._foot_outputs(state, kin, self.generalized_velocity(state))
        if state.contact_forces is None:
            state.contact_forces = np.zeros((state.n_envs, self.P, 3))
        if state.contact_anchors is None:
            state.contact_anchors = np.full((state.n_envs, self.P, 2), np.nan)
        state.foot_contacts = self._filtered(state.contact_history)
        return state

    def standing_height(self):
        """Root height at which the feet touch flat ground in the default pose."""
        st = self.make_state(base_pos=[0.0, 0.0, 0.0])
        return float(-(st.foot_positions[0, :, 2]).mean())

    # -- kinematics -------------------------------------------------------
    def kinematics(self, state) -> Kinematics:
        if state._kin is not None:
            return state._kin
        n, L = state.n_envs, self.L
        R = np.empty((n, L, 3, 3))
        o = np.empty((n, L, 3))
        S = np.zeros((n, L, 6))
        R[:, 0] = rot.quat_to_mat(state.base_quat)
        o[:, 0] = state.base_pos
        for i in range(1, L):
            p = self.parent[i]
            Rp = R[:, p]
            o[:, i] = o[:, p] + Rp @ self.joint_origin[i]
            k = self.dof[i]
            if k >= 0:
                th = state.q[:, k - 6]
                s, c = np.sin(th)[:, None, None], np.cos(th)[:, None, None]
                Rj = np.eye(3) + s * self._axis_K[i] + (1.0 - c) * self._axis_K2[i]
                R[:, i] = Rp @ Rj
                a = Rp @ self.joint_axis[i]
                S[:, i, :3] = a
                S[:, i, 3:] = _cross(o[:, i], a)
            else:
                R[:, i] = Rp
        c = o + _mv(R, self.com)
        Ic = (R * self.inertia[..., None, :]) @ np.swapaxes(R, -1, -2)
        C = rot.skew(c)
        m = self.mass[..., None, None]
        I6 = np.empty((n, L, 6, 6))
        I6[..., :3, :3] = Ic - m * (C @ C)
        I6[..., :3, 3:] = m * C
        I6[..., 3:, :3] = -m * C
        I6[..., 3:, 3:] = m * np.eye(3)
        S0 = np.zeros((n, 6, 6))
        S0[:, :3, :3] = np.eye(3)
        S0[:, 3:, 3:] = np.eye(3)
        S0[:, 3:, :3] = rot.skew(state.base_pos)
        Js = np.zeros((n, L, 6, self.nv))
        Js[:, 0, :, :6] = S0
        for i in range(1, L):
            Js[:, i] = Js[:, self.parent[i]]
            if self.dof[i] >= 0:
                Js[:, i, :, self.dof[i]] = S[:, i]
        probes = o[:, self.probe_link] + _mv(R[:, self.probe_link], self.probe_pos)
        kin = Kinematics(R, o, S, S0, c, Ic, I6, Js, probes)
        state._kin = kin
        return kin

    @staticmethod
    def generalized_velocity(state):
        return np.concatenate([state.base_angvel, state.base_linvel, state.qdot], axis=1)

    def link_velocities(self, kin, u):
        return _mv(kin.Js, u[:, None])

    def point_jacobian(self, kin, links, points):
        """(N, P, 3, nv) Jacobians of world points rigidly attached to ``links``."""
        Js = kin.Js[:, links]
        return Js[:, :, 3:] - rot.skew(points) @ Js[:, :, :3]

    # -- dynamics terms -----------------------------------------------------
    def bias_forces(self, kin, u, gravity=None):
        """Generalized Coriolis/centrifugal + gravity forces (RNEA with zero accel)."""
        g = self.contact.gravity if gravity is None else gravity
        n = u.shape[0]
        v = self.link_velocities(kin, u)
        a = np.empty((n, self.L, 6))
        a[:, 0] = 0.0
        a[:, 0, 3:] = _cross(u[:, 3:6], u[:, :3])
        a[:, 0, 5] += g
        for i in range(1, self.L):
            a[:, i] = a[:, self.parent[i]]
            k = self.dof[i]
            if k >= 0:
                a[:, i] += crm(v[:, i], kin.S[:, i]) * u[:, k, None]
        f = _mv(kin.I6, a) + crf(v, _mv(kin.I6, v))
        h = np.empty((n, self.nv))
        for i in range(self.L - 1, 0, -1):
            f[:, self.parent[i]] += f[:, i]
            k = self.dof[i]
            if k >= 0:
                h[:, k] = (kin.S[:, i] * f[:, i]).sum(axis=1)
        h[:, :6] = _mv(np.swapaxes(kin.S0, 1, 2), f[:, 0])
        return h

    def mass_matrix(self, kin):
        """Composite-rigid-body mass matrix."""
        n = kin.o.shape[0]
        Ic = kin.I6.copy()
        for i in range(self.L - 1, 0, -1):
            Ic[:, self.parent[i]] += Ic[:, i]
        M = np.zeros((n, self.nv, self.nv))
        M[:, :6, :6] = np.swapaxes(kin.S0, 1, 2) @ Ic[:, 0] @ kin.S0
        for i in range(1, self.L):
            k = self.dof[i]
            if k < 0:
                continue
            F = _mv(Ic[:, i], kin.S[:, i])
            M[:, k, k] = (kin.S[:, i] * F).sum(axis=1)
            for j in self.ancestors[i]:
                kj = self.dof[j]
                if j == 0:
                    col = _mv(np.swapaxes(kin.S0, 1, 2), F)
                    M[:, k, :6] = col
                    M[:, :6, k] = col
                elif kj >= 0:
                    val = (kin.S[:, j] * F).sum(axis=1)
                    M[:, k, kj] = val
                    M[:, kj, k] = val
        return M

    # -- momentum / energy --------------------------------------------------
    def com_position(self, kin):
        m = self.mass
        return np.einsum("nl,nli->ni", m, kin.c) / m.sum(axis=1)[:, None]

    def linear_momentum(self, kin, u):
        v = self.link_velocities(kin, u)
        vc = v[..., 3:] + _cross(v[..., :3], kin.c)
        return np.einsum("nl,nli->ni", self.mass, vc)

    def angular_momentum_com(self, kin, u, com=None):
        v = self.link_velocities(kin, u)
        w = v[..., :3]
        vc = v[..., 3:] + _cross(w, kin.c)
        com = self.com_position(kin) if com is None else com
        d = kin.c - com[:, None]
        return (_mv(kin.Ic, w).sum(axis=1)
                + np.einsum("nl,nli->ni", self.mass, _cross(d, vc)))

    def locked_inertia(self, kin, com=None):
        com = self.com_position(kin) if com is None else com
        D = rot.skew(kin.c - com[:, None])
        return (kin.Ic - self.mass[..., None, None] * (D @ D)).sum(axis=1)

    def mechanical_energy(self, state):
        kin = self.kinematics(state)
        u = self.generalized_velocity(state)
        M = self.mass_matrix(kin)
        ke = 0.5 * np.einsum("ni,nij,nj->n", u, M, u)
        pe = self.contact.gravity * np.einsum("nl,nl->n", self.mass, kin.c[..., 2])
        return ke + pe

    # -- stepping -------------------------------------------------------------
    def clamp_torques(self, torques):
        return np.clip(torques, -self.torque_limit, self.torque_limit)

    def step(self, state: SimState, torques, dt, check=True) -> SimState:
        """Advance one substep; returns a new state.

        With ``check=False`` non-finite values are left in the returned state
        instead of raising, so a batch runner can flag and reset the
        offending envs individually (envs never mix inside a step).
        """
        if not dt > 0:
            raise ValueError("dt must be positive")
        torques = np.asarray(torques, dtype=float)
        torques = np.broadcast_to(torques, (state.n_envs, self.nj))
        if check and not np.all(np.isfinite(torques)):
            raise IntegrationError("non-finite torque input")
        u = self.generalized_velocity(state)
        if check and not (np.all(np.isfinite(u)) and np.all(np.isfinite(state.q))
                and np.all(np.isfinite(state.base_pos))):
            raise IntegrationError("non-finite state input")
        cp = self.contact
        n, nv = state.n_envs, self.nv
        kin = self.kinematics(state)
        tau = np.zeros((n, nv))
        tau[:, 6:] = self.clamp_torques(torques)
        h = self.bias_forces(kin, u)
        M = self.mass_matrix(kin)
        damp = np.zeros(nv)
        damp[6:] = self.joint_damping

        # linearly implicit penalty contact and joint damping
        A = M + dt * np.diag(damp)
        rhs = _mv(M, u) + dt * (tau - h)
        if cp.enabled:
            J = self.point_jacobian(kin, self.probe_link, kin.probes)
            ground = self.terrain.height(kin.probes[..., 0], kin.probes[..., 1])
            pen = ground - (kin.probes[..., 2] - self.probe_radius)
            active = (pen > 0).astype(float)
            anchors = np.where(active[..., None] > 0,
                               np.where(np.isnan(state.contact_anchors),
                                        kin.probes[..., :2], state.contact_anchors),
                               np.nan)
            slip0 = np.where(active[..., None] > 0, kin.probes[..., :2] - anchors, 0.0)
            wn = active * dt * (dt * cp.stiffness + cp.damping)
            wt = active * dt * (dt * cp.tangential_stiffness + cp.tangential_damping)
            Jr = J.reshape(n, 3 * self.P, nv)
            w = np.stack([wt, wt, wn], axis=-1).reshape(n, 3 * self.P)
            A = A + np.swapaxes(Jr, 1, 2) @ (w[..., None] * Jr)
            b = np.concatenate([-cp.tangential_stiffness * slip0,
                                (cp.stiffness * active * pen)[..., None]], axis=-1)
            rhs = rhs + dt * _mv(np.swapaxes(Jr, 1, 2), b.reshape(n, 3 * self.P))
        u_pred = np.linalg.solve(A, rhs[..., None])[..., 0]

        gen = tau - h
        gen[:, 6:] -= damp[6:] * u_pred[:, 6:]
        forces = np.zeros((n, self.P, 3))
        if cp.enabled:
            vp = _mv(Jr, u_pred).reshape(n, self.P, 3)
            vn, vt = vp[..., 2], vp[..., :2]
            fn = np.maximum(active * (cp.stiffness * (pen - dt * vn) - cp.damping * vn), 0.0)
            ft = -active[..., None] * (cp.tangential_stiffness * (slip0 + dt * vt)
                                       + cp.tangential_damping * vt)
            cap = self.friction[:, None] * fn
            mag = np.linalg.norm(ft, axis=-1)
            sliding = mag > cap
            scale = np.where(sliding, cap / np.maximum(mag, 1e-300), 1.0)
            ft = ft * scale[..., None]
            forces[..., :2] = ft
            forces[..., 2] = fn
            gen = gen + _mv(np.swapaxes(Jr, 1, 2), forces.reshape(n, 3 * self.P))
        u_new = u + dt * np.linalg.solve(M, gen[..., None])[..., 0]
        if check and not np.all(np.isfinite(u_new)):
            raise IntegrationError("integration produced non-finite velocities")

        # positions from the mean of old and new velocities
        u_mid = 0.5 * (u + u_new)
        new = SimState(
            base_pos=state.base_pos + dt * u_mid[:, 3:6],
            base_quat=rot.quat_normalize(
                rot.quat_mul(rot.quat_from_rotvec(dt * u_mid[:, :3]), state.base_quat)),
            base_linvel=u_new[:, 3:6].copy(),
            base_angvel=u_new[:, :3].copy(),
            q=state.q + dt * u_mid[:, 6:],
            qdot=u_new[:, 6:].copy(),
            time=state.time + dt,
            contact_history=state.contact_history.copy(),
            contact_forces=forces,
        )
        kin1 = self.kinematics(new)
        if cp.enabled:
            # sliding probes drag their anchor so the spring force matches the cap
            dragged = kin1.probes[..., :2] + ft / cp.tangential_stiffness
            new.contact_anchors = np.where(sliding[..., None], dragged, anchors)
        else:
            new.contact_anchors = np.full((n, self.P, 2), np.nan)

        # momentum bookkeeping: end-of-step momenta equal start momenta plus
        # the external impulse, enforced through the root twist
        com0 = self.com_position(kin)
        P_target = (self.linear_momentum(kin, u)
                    + dt * (forces.sum(axis=1) + self.total_mass[:, None] * [0.0, 0.0, -cp.gravity]))
        L_target = (self.angular_momentum_com(kin, u, com0)
                    + dt * _cross(kin.probes - com0[:, None], forces).sum(axis=1))
        com1 = self.com_position(kin1)
        dL = L_target - self.angular_momentum_com(kin1, u_new, com1)
        dw = np.linalg.solve(self.locked_inertia(kin1, com1), dL[..., None])[..., 0]
        u_new[:, :3] += dw
        dP = P_target - self.linear_momentum(kin1, u_new)
        u_new[:, 3:6] += dP / self.total_mass[:, None]
        new.base_angvel = u_new[:, :3].copy()
        new.base_linvel = u_new[:, 3:6].copy()

        raw = forces[:, self.foot_probes, 2] > cp.force_threshold
        new.contact_history = np.concatenate([new.contact_history[:, 1:], raw[:, None]], axis=1)
        new.foot_contacts = self._filtered(new.contact_history)
        self._foot_outputs(new, kin1, u_new)
        return new

    def simulate(self, state, torques, dt, n_steps, check=True):
        for _ in range(n_steps):
            state = self.step(state, torques, dt, check=check)
        return state

    def _filtered(self, history):
        w = history.shape[1]
        return history.sum(axis=1) >= (w + 1) // 2

    def _foot_outputs(self, state, kin, u):
        fp = kin.probes[:, self.foot_probes]
        J = self.point_jacobian(kin, self.probe_link[self.foot_probes], fp)
        state.foot_velocities = _mv(J, u[:, None])
        sole = fp.copy()
        sole[..., 2] -= self.probe_radius[self.foot_probes]
        state.foot_positions = sole

    # -- queries --------------------------------------------------------------
    def foot_kinematics(self, state):
        """Per-foot terrain-relative height, planar velocity and filtered contact."""
        fp = state.foot_positions
        ground = self.terrain.height(fp[..., 0], fp[..., 1])
        return {
            "p_z": fp[..., 2] - ground,
            "v_xy": state.foot_velocities[..., :2].copy(),
            "contact": state.foot_contacts.copy(),
        }

    def nonfoot_contact(self, state):
        """True where any non-foot probe carried normal force in the last substep."""
        fn = state.contact_forces[..., 2]
        return np.any((fn > 0) & ~self.is_foot_probe, axis=1)

    def base_height(self, state):
        """Root height above the local terrain."""
        p = state.base_pos
        return p[:, 2] - self.terrain.height(p[:, 0], p[:, 1])


def apply_push(state: SimState, delta_v) -> SimState:
    """Instantaneous planar change of the root linear velocity."""
    delta_v = np.asarray(delta_v, dtype=float)
    new = state.copy()
    new._kin = state._kin
    new.base_linvel[..., 0] += delta_v[..., 0]
    new.base_linvel[..., 1] += delta_v[..., 1]
    return new
