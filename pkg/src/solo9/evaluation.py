"""Evaluation protocols: yaw-rate steering, terrain survival and push disturbance."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import tomli

from .coopt import VARIANTS, make_variant
from .dataset import MotionDataset, _slices as _frame_slices, core_channels, save_dataset
from .env import EnvConfig, QuadrupedEnv
from .physics import apply_push

KINDS = ("steering", "terrain", "disturbance")
TABLE3_MAGNITUDES = (0.5, 0.7, 1.0)
STRAIGHT = "straight"
UNDEFINED = "undefined"


PROTOCOL_ALIASES = {"tableii": "table2", "tableiii": "table3"}


class ProtocolError(ValueError):
    pass


@dataclass
class EvalProtocol:
    name: str = "custom"
    kind: str = "terrain"
    variant: str = "solo9"
    lin_vel: float = 0.6  # m/s
    yaw_rates: list = field(default_factory=lambda: [-0.4])  # rad/s
    terrain: str = "flat"  # flat | uneven | steps
    terrain_amplitude: float = 0.035
    step_heights: list = field(default_factory=lambda: [0.025, 0.0275, 0.029])
    push_magnitudes: list = field(default_factory=list)  # m/s
    push_interval: float = 0.0  # s between pushes; 0 pushes at every control step
    duration: float = 15.0
    n_episodes: int = 200  # per seed group
    n_groups: int = 5
    seed: int = 0
    steady_start: float = 2.0  # s ignored before steering statistics
    straight_threshold: float = 0.02  # rad/s
    table3_mode: bool = False
    terrain_seed: int = 0

    def validate(self):
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown protocol kind {self.kind!r}")
        if self.variant not in VARIANTS:
            raise ProtocolError(f"unknown variant {self.variant!r}")
        if self.duration <= 0 or self.n_episodes < 1 or self.n_groups < 1:
            raise ProtocolError("duration, n_episodes and n_groups must be positive")
        if self.kind == "steering" and not 0 <= self.steady_start < self.duration:
            raise ProtocolError("steady_start must lie inside the episode")
        if self.table3_mode and sorted(self.push_magnitudes) != list(TABLE3_MAGNITUDES):
            raise ProtocolError(f"table-III mode needs push magnitudes {TABLE3_MAGNITUDES}")
        return self


def protocol_from_dict(d) -> EvalProtocol:
    p = EvalProtocol()
    for k, v in d.items():
        if not hasattr(p, k):
            raise ProtocolError(f"unknown protocol key {k!r}")
        setattr(p, k, v)
    return p.validate()


def load_protocol(name_or_path) -> EvalProtocol:
    """Load a shipped protocol by name (``table2``, ``table3``, ``steering``) or a file."""
    path = Path(name_or_path)
    if path.exists():
        text = path.read_text()
    else:
        key = str(name_or_path).lower()
        key = PROTOCOL_ALIASES.get(key.replace("_", ""), key)
        try:
            text = resources.files("solo9.data").joinpath(f"protocols/{key}.toml").read_text()
        except FileNotFoundError:
            raise ProtocolError(f"no protocol file or shipped protocol named {name_or_path!r}") \
                from None
    try:
        return protocol_from_dict(tomli.loads(text))
    except tomli.TOMLDecodeError as exc:
        raise ProtocolError(f"{name_or_path}: {exc}") from None


@dataclass
class EvalReport:
    protocol: dict
    survival_rate: float = float("nan")
    survival_std: float = float("nan")
    mean_episode_time: float = float("nan")  # s, falls end an episode early
    group_rates: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)  # per-episode survived flags
    yaw_rmse: float = float("nan")
    turning_radius: object = float("nan")  # metres, or a marker string
    mean_speed: float = float("nan")
    mean_yaw_rate: float = float("nan")
    by_magnitude: dict = field(default_factory=dict)
    trajectory_logs: list = field(default_factory=list)

    def to_dict(self):
        return dataclasses.asdict(self)

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, default=float))
        return path


# -- policies ---------------------------------------------------------------------------

class ScriptedTwist:
    """Test-mode stand-in for a policy: the base follows a constant twist exactly."""

    def __init__(self, speed, yaw_rate):
        self.speed, self.yaw_rate = float(speed), float(yaw_rate)

    def trajectory(self, duration, dt):
        t = np.arange(int(round(duration / dt)) + 1) * dt
        yaw = self.yaw_rate * t
        vel = self.speed * np.stack([np.cos(yaw), np.sin(yaw), np.zeros_like(t)], axis=1)
        if abs(self.yaw_rate) > 0:
            r = self.speed / self.yaw_rate
            pos = np.stack([r * np.sin(yaw), r * (1 - np.cos(yaw)), np.zeros_like(t)], axis=1)
        else:
            pos = vel * t[:, None]
        return t, pos, vel, np.full_like(t, self.yaw_rate)


def as_policy(policy, n_act):
    """``None`` means the zero action, i.e. PD hold of the default pose."""
    if policy is None:
        return lambda obs: np.zeros((len(obs), n_act))
    if hasattr(policy, "mean_action"):
        return policy.mean_action
    return policy


# -- metrics ----------------------------------------------------------------------------

def turning_radius(speeds, yaw_rates, straight_threshold=0.02):
    """``mean(speed) / mean(|yaw rate|)``, or ``"straight"`` when the mean yaw rate is tiny."""
    speeds = np.asarray(speeds, dtype=float)
    yaw_rates = np.asarray(yaw_rates, dtype=float)
    if speeds.size == 0:
        return UNDEFINED
    if abs(yaw_rates.mean()) < straight_threshold:
        return STRAIGHT
    return float(speeds.mean() / np.abs(yaw_rates).mean())


def group_stats(outcomes, n_groups):
    """Overall rate plus mean/std of per-group rates (groups are contiguous episode blocks)."""
    outcomes = np.asarray(outcomes, dtype=float)
    groups = np.array_split(outcomes, n_groups)
    rates = [float(g.mean()) for g in groups]
    return float(outcomes.mean()), float(np.std(rates)), rates


# -- rollouts ---------------------------------------------------------------------------

def _eval_env(protocol: EvalProtocol, n, seed, cfg: EnvConfig | None = None):
    spec, free = make_variant(protocol.variant)
    cfg = dataclasses.replace(cfg or EnvConfig())
    cfg.randomization = dataclasses.replace(cfg.randomization, enabled=False)
    cfg.curriculum = dataclasses.replace(cfg.curriculum, enabled=False)
    cfg.termination = dataclasses.replace(cfg.termination, episode_length=protocol.duration)
    terrain = None
    if protocol.terrain == "uneven" and protocol.terrain_amplitude > 0:
        cfg.sim = dataclasses.replace(cfg.sim, terrain="uneven",
                                      terrain_amplitude=protocol.terrain_amplitude,
                                      terrain_seed=protocol.terrain_seed)
    elif protocol.terrain == "steps":
        from .physics import generate_terrain
        terrain = generate_terrain("steps", {"heights": protocol.step_heights},
                                   seed=protocol.terrain_seed, size=cfg.sim.terrain_size)
    elif protocol.terrain not in ("flat", "uneven"):
        raise ProtocolError(f"unknown terrain {protocol.terrain!r}")
    env = QuadrupedEnv(spec, n, cfg.validate(), seed=seed, free_waist=free, terrain=terrain)
    return env


def run_episodes(policy, protocol: EvalProtocol, n, seed, yaw_rate=0.0, push=0.0,
                 cfg: EnvConfig | None = None, log_frames=False):
    """Run ``n`` parallel episodes to the protocol horizon.

    Returns per-episode survival flags plus per-step speed and yaw-rate
    traces (NaN after an episode has ended) and the applied torques.
    """
    env = _eval_env(protocol, n, seed, cfg)
    env.set_commands(protocol.lin_vel, yaw_rate)
    env.reset()
    act = as_policy(policy, env.nj)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    steps = int(round(protocol.duration / env.dt))
    every = max(1, int(round(protocol.push_interval / env.dt))) if protocol.push_interval else 1
    active = np.ones(n, dtype=bool)
    survived = np.zeros(n, dtype=bool)
    end_time = np.full(n, protocol.duration)
    speed = np.full((steps, n), np.nan)
    yaw = np.full((steps, n), np.nan)
    torques, frames = [], []
    for t in range(steps):
        if push and t % every == 0:
            ang = rng.uniform(0.0, 2 * np.pi, size=n)
            dv = push * np.stack([np.cos(ang), np.sin(ang)], axis=1) * active[:, None]
            env.state = env.model.refresh(apply_push(env.state, dv))
        actor, _ = env.observations()
        _, _, terms, done, info = env.step(act(actor))
        v = info["final_frames"][:, 7:9]
        speed[t, active] = np.linalg.norm(v, axis=1)[active]
        yaw[t, active] = terms["yaw_rate"][active]
        torques.append(info["torques"][0].copy())
        if log_frames:
            frames.append(info["final_frames"][0].copy())
        survived |= active & info["timeout"]
        end_time[active & done] = info["episode_time"][active & done]
        active &= ~done
        if not active.any():
            break
    return {"survived": survived, "end_time": end_time, "speed": speed, "yaw": yaw, "torques": np.array(torques),
            "frames": np.array(frames), "dt": env.dt, "nj": env.nj, "spec": env.spec}


def _survival_report(policy, protocol, push=0.0, cfg=None):
    total = protocol.n_episodes * protocol.n_groups
    res = run_episodes(policy, protocol, total, protocol.seed, push=push,
                       yaw_rate=protocol.yaw_rates[0] if protocol.yaw_rates else 0.0, cfg=cfg)
    rate, std, groups = group_stats(res["survived"], protocol.n_groups)
    return EvalReport(protocol=dataclasses.asdict(protocol), survival_rate=rate,
                      survival_std=std, group_rates=groups,
                      mean_episode_time=float(res["end_time"].mean()),
                      outcomes=[bool(x) for x in res["survived"]])


def eval_survival(policy, protocol: EvalProtocol, cfg=None) -> EvalReport:
    """Fraction of episodes that reach the horizon without falling."""
    return _survival_report(policy, protocol, 0.0, cfg)


def eval_disturbance(policy, protocol: EvalProtocol, cfg=None) -> EvalReport:
    """Survival under random planar pushes, one report entry per push magnitude."""
    mags = protocol.push_magnitudes or [0.0]
    report = EvalReport(protocol=dataclasses.asdict(protocol))
    for mag in mags:
        sub = _survival_report(policy, protocol, float(mag), cfg)
        report.by_magnitude[str(float(mag))] = {"survival_rate": sub.survival_rate,
                                               "survival_std": sub.survival_std,
                                               "group_rates": sub.group_rates,
                                               "mean_episode_time": sub.mean_episode_time}
    first = report.by_magnitude[str(float(mags[0]))]
    report.survival_rate, report.survival_std = first["survival_rate"], first["survival_std"]
    report.mean_episode_time = first["mean_episode_time"]
    return report


def eval_steering(policy, protocol: EvalProtocol, cfg=None, log_dir=None) -> EvalReport:
    """Yaw-rate tracking RMSE and turning radius over the steady part of each episode."""
    if isinstance(policy, ScriptedTwist):
        return _scripted_steering(policy, protocol)
    reports = []
    speeds, yaws, errs, outcomes, logs = [], [], [], [], []
    for k, w in enumerate(protocol.yaw_rates):
        res = run_episodes(policy, protocol, protocol.n_episodes * protocol.n_groups,
                           protocol.seed + k, yaw_rate=w, cfg=cfg, log_frames=log_dir is not None)
        s0 = int(round(protocol.steady_start / res["dt"]))
        ok = res["survived"]
        outcomes += list(ok)
        if ok.any():
            sp, yw = res["speed"][s0:, ok], res["yaw"][s0:, ok]
            speeds.append(sp.ravel())
            yaws.append(yw.ravel())
            errs.append((yw - w).ravel())
        if log_dir is not None and len(res["frames"]):
            ds = MotionDataset([res["frames"]], res["dt"], 9, "eval", 0,
                               channels=core_channels(9) + [f"foot_{i}" for i in range(12)])
            path = Path(log_dir) / f"{protocol.name}_yaw{w:+.2f}.txt"
            save_dataset(ds, path, fmt="text")
            logs.append(str(path))
    rate, std, groups = group_stats(outcomes, protocol.n_groups)
    rep = EvalReport(protocol=dataclasses.asdict(protocol), survival_rate=rate, survival_std=std,
                     group_rates=groups, outcomes=[bool(x) for x in outcomes],
                     trajectory_logs=logs)
    if speeds:
        sp, yw, er = np.concatenate(speeds), np.concatenate(yaws), np.concatenate(errs)
        rep.yaw_rmse = float(np.sqrt(np.mean(er ** 2)))
        rep.mean_speed, rep.mean_yaw_rate = float(sp.mean()), float(yw.mean())
        rep.turning_radius = turning_radius(sp, yw, protocol.straight_threshold)
    else:
        rep.turning_radius = UNDEFINED
    return rep


def _scripted_steering(twist: ScriptedTwist, protocol: EvalProtocol) -> EvalReport:
    dt = EnvConfig().sim.control_dt
    t, pos, vel, yaw = twist.trajectory(protocol.duration, dt)
    steady = t >= protocol.steady_start
    sp = np.linalg.norm(vel[steady, :2], axis=1)
    rep = EvalReport(protocol=dataclasses.asdict(protocol), survival_rate=1.0, survival_std=0.0,
                     group_rates=[1.0] * protocol.n_groups)
    cmd = protocol.yaw_rates[0] if protocol.yaw_rates else 0.0
    rep.yaw_rmse = float(np.sqrt(np.mean((yaw[steady] - cmd) ** 2)))
    rep.mean_speed, rep.mean_yaw_rate = float(sp.mean()), float(yaw[steady].mean())
    rep.turning_radius = turning_radius(sp, yaw[steady], protocol.straight_threshold)
    return rep


def evaluate(policy, protocol: EvalProtocol, cfg=None, log_dir=None) -> EvalReport:
    if protocol.kind == "steering":
        return eval_steering(policy, protocol, cfg, log_dir)
    if protocol.kind == "disturbance":
        return eval_disturbance(policy, protocol, cfg)
    return eval_survival(policy, protocol, cfg)


def replay_clip(ds: MotionDataset, clip=0, spec=None) -> MotionDataset:
    """Push a stored clip through forward kinematics and append world foot positions.

    Returns a one-clip dataset whose frames carry 12 extra ``foot_*`` channels.
    """
    from .physics import ArticulatedModel
    from .robot import load_robot_spec

    frames = np.asarray(ds.clips[clip])
    spec = spec or load_robot_spec("solo9" if ds.dof == 9 else "solo8")
    if spec.n_actuated != ds.dof:
        raise ProtocolError(f"robot has {spec.n_actuated} joints but the dataset has {ds.dof}")
    sl = _frame_slices(ds.dof)
    model = ArticulatedModel(spec, n_envs=len(frames))
    state = model.make_state(base_pos=frames[:, sl["pos"]], base_quat=frames[:, sl["quat"]],
                             q=frames[:, sl["q"]], base_linvel=frames[:, sl["linvel"]],
                             base_angvel=frames[:, sl["angvel"]], qdot=frames[:, sl["qdot"]])
    feet = state.foot_positions.reshape(len(frames), 12)
    out = np.concatenate([frames[:, :len(core_channels(ds.dof))], feet], axis=1)
    name = ds.names[clip] if ds.names else f"clip{clip}"
    return MotionDataset([out], ds.dt, ds.dof, ds.gait, ds.iteration, names=[name],
                         channels=core_channels(ds.dof) + [f"foot_{i}" for i in range(12)],
                         provenance={"replayed_from": ds.content_hash(), "clip": int(clip)})
