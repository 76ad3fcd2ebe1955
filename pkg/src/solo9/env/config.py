"""Training/evaluation configuration: dataclasses, TOML loading and ``--set`` overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli

SECTIONS = ("rewards", "randomization", "curriculum", "termination", "action", "sim")


class ConfigError(ValueError):
    pass


@dataclass
class RewardWeights:
    # tracking terms (>= 0)
    c_angvel: float = 0.5
    c_linvel: float = 1.0
    c_air: float = 0.5
    # penalties (<= 0)
    c_slip: float = -0.05
    c_clear: float = -2.0
    c_smooth: float = -0.01
    c_torque: float = -2e-3
    c_height: float = -5.0
    c_fall: float = -2.0
    # kernel parameters
    sigma_angvel: float = 0.25
    sigma_linvel: float = 0.25
    angvel_mode: str = "tracking"
    p_z_max: float = 0.05
    air_time_target: float = 0.25
    height_target: float = 0.22
    w_I: float = 0.0

    TRACKING = ("c_angvel", "c_linvel", "c_air")
    PENALTIES = ("c_slip", "c_clear", "c_smooth", "c_torque", "c_height", "c_fall")

    def validate(self):
        if not 0.0 <= self.w_I <= 1.0:
            raise ConfigError("rewards.w_I must lie in [0, 1]")
        for name in self.TRACKING:
            if getattr(self, name) < 0:
                raise ConfigError(f"rewards.{name} must be >= 0")
        for name in self.PENALTIES:
            if getattr(self, name) > 0:
                raise ConfigError(f"rewards.{name} must be <= 0")
        if self.angvel_mode not in ("tracking", "positive_exponent"):
            raise ConfigError("rewards.angvel_mode must be 'tracking' or 'positive_exponent'")
        if self.p_z_max <= 0:
            raise ConfigError("rewards.p_z_max must be positive")
        return self


@dataclass
class RandomizationRanges:
    friction: tuple = (0.2, 2.5)  # multiplier on ground friction
    base_mass: tuple = (-0.7, 1.5)  # kg added to the trunk
    center_of_mass: tuple = (-1.5, 1.5)  # cm, per axis
    initial_joint_angles: tuple = (0.9, 1.1)  # multiplier on the default pose
    lin_vel_cmd: tuple = (0.0, 1.0)  # m/s
    ang_vel_cmd: tuple = (-0.5, 0.5)  # rad/s
    enabled: bool = True

    RANGES = ("friction", "base_mass", "center_of_mass", "initial_joint_angles",
              "lin_vel_cmd", "ang_vel_cmd")

    def validate(self):
        for name in self.RANGES:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"randomization.{name}: lower bound exceeds upper bound")
            setattr(self, name, (float(lo), float(hi)))
        return self


@dataclass
class CurriculumConfig:
    enabled: bool = True
    terrain_levels: int = 5  # levels 0..terrain_levels-1, level 0 flat
    pd_levels: int = 4
    kp_range: tuple = (5.0, 3.0)  # gain at level 0 and at the top level
    kd_range: tuple = (0.2, 0.1)
    min_target: float = 0.2  # m, floor of the per-episode walking target
    tile: float = 4.0

    def validate(self):
        if self.terrain_levels < 1 or self.pd_levels < 1:
            raise ConfigError("curriculum levels must be >= 1")
        return self


@dataclass
class TerminationConfig:
    min_base_height: float = 0.08
    max_tilt: float = 1.2  # rad, on roll and pitch
    nonfoot_contact: bool = True
    episode_length: float = 15.0  # s

    def validate(self):
        if self.episode_length <= 0:
            raise ConfigError("termination.episode_length must be positive")
        return self


@dataclass
class ActionConfig:
    mode: str = "pd_target"  # or "direct_torque"
    scale: float = 0.25  # rad per unit action
    kp: float = 3.0
    kd: float = 0.1
    clip: float = 4.0  # raw actions are clipped to [-clip, clip]
    # re-evaluate the PD law every physics substep (target held); False holds the torque
    pd_every_substep: bool = True

    def validate(self):
        if self.mode not in ("pd_target", "direct_torque"):
            raise ConfigError("action.mode must be 'pd_target' or 'direct_torque'")
        return self


@dataclass
class SimConfig:
    substep: float = 1.0 / 240
    decimation: int = 5  # substeps per control step
    friction: float = 1.0
    stiffness: float = 4000.0
    damping: float = 40.0
    terrain: str = "flat"  # flat | uneven | steps | curriculum
    terrain_amplitude: float = 0.035
    terrain_seed: int = 0
    terrain_size: float = 16.0

    @property
    def control_dt(self):
        return self.substep * self.decimation

    def validate(self):
        if self.substep <= 0 or self.decimation < 1:
            raise ConfigError("sim.substep must be > 0 and sim.decimation >= 1")
        return self


@dataclass
class EnvConfig:
    rewards: RewardWeights = field(default_factory=RewardWeights)
    randomization: RandomizationRanges = field(default_factory=RandomizationRanges)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    termination: TerminationConfig = field(default_factory=TerminationConfig)
    action: ActionConfig = field(default_factory=ActionConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self):
        return {name: {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in dataclasses.asdict(getattr(self, name)).items()}
                for name in SECTIONS}


def _coerce(current, raw, key):
    if isinstance(current, bool):
        if isinstance(raw, str):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        return bool(raw)
    if isinstance(current, tuple):
        if isinstance(raw, str):
            raw = [float(x) for x in raw.strip("[]()").split(",")]
        if len(raw) != len(current):
            raise ConfigError(f"{key}: expected {len(current)} values")
        return tuple(float(x) for x in raw)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return str(raw)


def config_from_dict(data, base: EnvConfig | None = None) -> EnvConfig:
    cfg = base if base is not None else EnvConfig()
    for section, values in data.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        obj = getattr(cfg, section)
        for key, raw in values.items():
            if not hasattr(obj, key) or key.isupper():
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                setattr(obj, key, _coerce(getattr(obj, key), raw, f"{section}.{key}"))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from None
    return cfg.validate()


def apply_overrides(cfg: EnvConfig, overrides) -> EnvConfig:
    """Apply ``section.key=value`` strings (the ``--set`` CLI flag)."""
    data = {}
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        path, value = item.split("=", 1)
        section, key = path.strip().split(".", 1)
        data.setdefault(section, {})[key] = value.strip()
    return config_from_dict(data, cfg)


def load_config(path=None, overrides=()) -> EnvConfig:
    cfg = EnvConfig()
    if path is not None:
        try:
            data = tomli.loads(Path(path).read_text())
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = config_from_dict(data, cfg)
    return apply_overrides(cfg, overrides)
