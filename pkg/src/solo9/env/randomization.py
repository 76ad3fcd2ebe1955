"""Per-episode domain randomization and the walking-distance curriculum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RandomizationRanges


class RandomizationError(RuntimeError):
    pass


def randomize_env(ranges: RandomizationRanges, n, rng, trunk_mass, max_retries=10):
    """Sample ``n`` sets of physical overrides and initial commands.

    ``trunk_mass`` holds the nominal masses of the trunk halves; the sampled
    base-mass delta is split evenly between them.  Samples that would make
    a trunk mass non-positive are redrawn.

    Returns a dict of arrays: ``friction`` (n,), ``base_mass`` (n,),
    ``com_offset`` (n, 3) in metres, ``joint_scale`` (n,), ``lin_vel_cmd``
    (n,) and ``ang_vel_cmd`` (n,).
    """
    rng = np.random.default_rng(rng)
    trunk_mass = np.asarray(trunk_mass, dtype=float)

    def u(bounds, size):
        lo, hi = bounds
        return rng.uniform(lo, hi, size=size) if hi > lo else np.full(size, float(lo))

    out = {
        "friction": u(ranges.friction, n),
        "base_mass": u(ranges.base_mass, n),
        "com_offset": 0.01 * u(ranges.center_of_mass, (n, 3)),
        "joint_scale": u(ranges.initial_joint_angles, n),
        "lin_vel_cmd": u(ranges.lin_vel_cmd, n),
        "ang_vel_cmd": u(ranges.ang_vel_cmd, n),
    }
    for _ in range(max_retries):
        bad = np.any(trunk_mass[None] + out["base_mass"][:, None] / len(trunk_mass) <= 0, axis=1)
        if not bad.any():
            return out
        out["base_mass"][bad] = u(ranges.base_mass, int(bad.sum()))
    raise RandomizationError("could not sample a positive trunk mass")


@dataclass
class CurriculumState:
    terrain_level: np.ndarray
    pd_gain_level: np.ndarray
    walked: np.ndarray
    max_terrain_level: int
    max_pd_level: int

    @classmethod
    def zeros(cls, n, max_terrain_level, max_pd_level):
        return cls(np.zeros(n, dtype=int), np.zeros(n, dtype=int), np.zeros(n),
                   int(max_terrain_level), int(max_pd_level))

    def copy(self):
        return CurriculumState(self.terrain_level.copy(), self.pd_gain_level.copy(),
                               self.walked.copy(), self.max_terrain_level, self.max_pd_level)


def _level_update(level, walked, target, max_level, rng):
    up = walked >= target
    down = walked < 0.5 * target
    new = level + up.astype(int) - (down & ~up).astype(int)
    new = np.maximum(new, 0)
    wrap = up & (level >= max_level)
    if wrap.any():
        new[wrap] = rng.integers(0, max_level + 1, size=int(wrap.sum()))
    return np.minimum(new, max_level)


def curriculum_update(cs: CurriculumState, walked, target, env_ids=None, rng=None):
    """Promote envs that walked the target distance, demote those below half of it.

    Envs already at the top level are sent to a uniformly random level when
    promoted.  Only ``env_ids`` are updated (all envs by default).
    """
    rng = np.random.default_rng(rng)
    out = cs.copy()
    ids = np.arange(len(cs.terrain_level)) if env_ids is None else np.asarray(env_ids)
    walked = np.broadcast_to(np.asarray(walked, dtype=float), ids.shape)
    target = np.broadcast_to(np.asarray(target, dtype=float), ids.shape)
    if np.any(walked < 0) or np.any(target < 0):
        raise ValueError("walked and target distances must be non-negative")
    out.terrain_level[ids] = _level_update(cs.terrain_level[ids], walked, target,
                                           cs.max_terrain_level, rng)
    out.pd_gain_level[ids] = _level_update(cs.pd_gain_level[ids], walked, target,
                                           cs.max_pd_level, rng)
    out.walked[ids] = walked
    return out
