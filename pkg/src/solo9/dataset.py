"""Reference-motion datasets: storage, waist augmentation, window sampling, export.

A dataset is a list of clips.  Every clip is a ``(T, D)`` float64 array whose
columns follow ``core_channels(dof)``, optionally followed by extra logged
channels (e.g. foot positions in trajectory logs).  Per-frame layout::

    pos(3) quat(4) linvel(3) angvel(3) normal(3) height(1) q(dof) qdot(dof)

Positions and velocities are world-frame.  ``normal`` is world up expressed
in the base frame (the projected gravity direction, sign flipped).
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .physics import rotations as rot

DISC_OBS_DIM = 27
DEFAULT_WAIST_INDEX = 4
_BLOCKS = [("pos", 3), ("quat", 4), ("linvel", 3), ("angvel", 3), ("normal", 3), ("height", 1)]
BASE_DIM = sum(n for _, n in _BLOCKS)
MAGIC = b"SOLOMDS\x00"
TEXT_MAGIC = "#SOLOMDS"
FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


def core_channels(dof):
    names = []
    for block, n in _BLOCKS:
        names += [f"{block}_{i}" for i in range(n)] if n > 1 else [block]
    names += [f"q_{i}" for i in range(dof)] + [f"qdot_{i}" for i in range(dof)]
    return names


def frame_dim(dof):
    return BASE_DIM + 2 * dof


def _slices(dof):
    out, k = {}, 0
    for block, n in _BLOCKS + [("q", dof), ("qdot", dof)]:
        out[block] = slice(k, k + n)
        k += n
    return out


@dataclass
class FrameRecord:
    pos: np.ndarray
    quat: np.ndarray
    linvel: np.ndarray
    angvel: np.ndarray
    normal: np.ndarray
    height: float
    q: np.ndarray
    qdot: np.ndarray

    @property
    def dof(self):
        return len(self.q)

    @classmethod
    def from_vector(cls, v, dof):
        s = _slices(dof)
        v = np.asarray(v, dtype=float)
        return cls(*(v[s[b]].copy() for b in ("pos", "quat", "linvel", "angvel", "normal")),
                   float(v[s["height"]][0]), v[s["q"]].copy(), v[s["qdot"]].copy())

    def to_vector(self):
        return np.concatenate([self.pos, self.quat, self.linvel, self.angvel, self.normal,
                               [self.height], self.q, self.qdot]).astype(float)

    def validate(self, tol=1e-6):
        if abs(np.linalg.norm(self.quat) - 1) > tol:
            raise DatasetError("quaternion is not unit-norm")
        if abs(np.linalg.norm(self.normal) - 1) > tol:
            raise DatasetError("normal vector is not unit-norm")
        if np.abs(base_normal(self.quat) - self.normal).max() > tol:
            raise DatasetError("normal vector inconsistent with quaternion")


def base_normal(quat):
    """World up axis expressed in the base frame."""
    quat = np.asarray(quat, dtype=float)
    up = np.broadcast_to([0.0, 0.0, 1.0], quat.shape[:-1] + (3,))
    return rot.quat_rotate_inverse(quat, up)


def make_frames(pos, quat, linvel, angvel, height, q, qdot):
    """Stack per-channel arrays (leading time axis) into a clip array."""
    quat = np.asarray(quat, dtype=float)
    height = np.asarray(height, dtype=float).reshape(len(quat), 1)
    return np.concatenate([np.asarray(pos, float), quat, np.asarray(linvel, float),
                           np.asarray(angvel, float), base_normal(quat), height,
                           np.asarray(q, float), np.asarray(qdot, float)], axis=-1)


def extract_discriminator_obs(frames, dof=9):
    """Map frame vectors (..., D) to the 27-dim discriminator observation.

    Layout: linvel (3, world frame), roll and pitch rates (2, base frame),
    normal (3), height (1), q (9), qdot (9).  Base position, the quaternion
    and the yaw rate are left out; dropping the yaw rate is what makes the
    remaining blocks add up to 27.
    """
    if dof != 9:
        raise DatasetError(f"discriminator observations need 9-DOF frames, got dof={dof}")
    frames = np.asarray(frames, dtype=float)
    s = _slices(dof)
    quat = frames[..., s["quat"]]
    w_body = rot.quat_rotate_inverse(quat, frames[..., s["angvel"]])
    return np.concatenate([frames[..., s["linvel"]], w_body[..., :2], frames[..., s["normal"]],
                           frames[..., s["height"]], frames[..., s["q"]], frames[..., s["qdot"]]],
                          axis=-1)


# indices of the 27-dim observation, kept for layout assertions
DISC_OBS_LAYOUT = {"linvel": slice(0, 3), "rollpitch_rate": slice(3, 5), "normal": slice(5, 8),
                   "height": slice(8, 9), "q": slice(9, 18), "qdot": slice(18, 27)}


@dataclass
class MotionDataset:
    """Clips of framed reference motion plus metadata."""

    clips: list
    dt: float
    dof: int
    gait: str = "trot"
    iteration: int = 0
    names: list = None
    channels: list = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.clips = [np.ascontiguousarray(c, dtype=np.float64) for c in self.clips]
        if self.names is None:
            self.names = [f"clip{i:03d}" for i in range(len(self.clips))]
        if self.channels is None:
            self.channels = core_channels(self.dof)
        self.validate()

    # -- bookkeeping -------------------------------------------------------
    @property
    def meta(self):
        return {"dt": self.dt, "dof": self.dof, "gait": self.gait, "iteration": self.iteration,
                "channels": list(self.channels), "names": list(self.names),
                "lengths": [len(c) for c in self.clips], "provenance": dict(self.provenance)}

    @property
    def n_frames(self):
        return sum(len(c) for c in self.clips)

    @property
    def core_dim(self):
        return frame_dim(self.dof)

    def validate(self, min_frames=1):
        if not self.dt > 0:
            raise DatasetError("dt must be positive")
        if self.dof not in (8, 9):
            raise DatasetError(f"dof must be 8 or 9, got {self.dof}")
        if len(self.names) != len(self.clips):
            raise DatasetError("one name per clip required")
        if self.channels[:self.core_dim] != core_channels(self.dof):
            raise DatasetError("channel list does not start with the core layout")
        for name, c in zip(self.names, self.clips):
            if c.ndim != 2 or c.shape[1] != len(self.channels):
                raise DatasetError(f"clip {name!r}: expected {len(self.channels)} channels, "
                                   f"got shape {c.shape}")
            if len(c) < min_frames:
                raise DatasetError(f"clip {name!r} has {len(c)} frames, needs {min_frames}")
            if not np.all(np.isfinite(c)):
                raise DatasetError(f"clip {name!r} contains non-finite values")
            sl = _slices(self.dof)
            quat = c[:, sl["quat"]]
            if np.abs(np.linalg.norm(quat, axis=1) - 1).max(initial=0) > 1e-6:
                raise DatasetError(f"clip {name!r}: quaternion not unit-norm")
            if np.abs(base_normal(quat) - c[:, sl["normal"]]).max(initial=0) > 1e-6:
                raise DatasetError(f"clip {name!r}: normal vector inconsistent with quaternion")

    def frame(self, clip, t):
        return FrameRecord.from_vector(self.clips[clip][t, :self.core_dim], self.dof)

    def channel(self, clip, name):
        return self.clips[clip][:, self.channels.index(name)]

    def core(self, clip):
        return self.clips[clip][:, :self.core_dim]

    def copy(self, **changes):
        kw = dict(clips=[c.copy() for c in self.clips], dt=self.dt, dof=self.dof, gait=self.gait,
                  iteration=self.iteration, names=list(self.names), channels=list(self.channels),
                  provenance=dict(self.provenance))
        kw.update(changes)
        return MotionDataset(**kw)

    def select(self, allowlist):
        """Keep only the named clips (explicit manual selection)."""
        keep = [i for i, nm in enumerate(self.names) if nm in set(allowlist)]
        missing = set(allowlist) - set(self.names)
        if missing:
            raise DatasetError(f"unknown clips in allowlist: {sorted(missing)}")
        return self.copy(clips=[self.clips[i] for i in keep], names=[self.names[i] for i in keep])

    def content_hash(self):
        return hashlib.sha256(encode_binary(self)).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, MotionDataset):
            return NotImplemented
        return (self.meta == other.meta and len(self.clips) == len(other.clips)
                and all(np.array_equal(a, b) for a, b in zip(self.clips, other.clips)))

    # -- discriminator views -----------------------------------------------
    def discriminator_obs(self, clip):
        return extract_discriminator_obs(self.core(clip), self.dof)


# -- waist augmentation ----------------------------------------------------

def augment_zero_waist(ds: MotionDataset, waist_index=DEFAULT_WAIST_INDEX) -> MotionDataset:
    """Insert all-zero waist position and velocity channels into an 8-DOF dataset."""
    if ds.dof != 8:
        raise DatasetError(f"augmentation expects an 8-DOF dataset, got dof={ds.dof}")
    if not 0 <= waist_index <= 8:
        raise DatasetError("waist index must be in [0, 8]")
    q0, qd0 = BASE_DIM + waist_index, BASE_DIM + 8 + waist_index
    clips = []
    for c in ds.clips:
        z = np.zeros((len(c), 1))
        clips.append(np.concatenate([c[:, :q0], z, c[:, q0:qd0], z, c[:, qd0:]], axis=1))
    extra = ds.channels[frame_dim(8):]
    prov = dict(ds.provenance, augmented="zero_waist", waist_index=waist_index)
    return MotionDataset(clips, ds.dt, 9, ds.gait, 0, list(ds.names),
                         core_channels(9) + list(extra), prov)


def drop_waist(ds: MotionDataset, waist_index=DEFAULT_WAIST_INDEX, iteration=None) -> MotionDataset:
    """Inverse of ``augment_zero_waist``: remove the waist channels of a 9-DOF dataset."""
    if ds.dof != 9:
        raise DatasetError(f"expected a 9-DOF dataset, got dof={ds.dof}")
    q0, qd0 = BASE_DIM + waist_index, BASE_DIM + 9 + waist_index
    keep = [i for i in range(len(ds.channels)) if i not in (q0, qd0)]
    prov = dict(ds.provenance)
    if prov.get("augmented") == "zero_waist":
        prov.pop("augmented")
        prov.pop("waist_index", None)
    return MotionDataset([c[:, keep] for c in ds.clips], ds.dt, 8, ds.gait,
                         ds.iteration if iteration is None else iteration, list(ds.names),
                         core_channels(8) + ds.channels[frame_dim(9):], prov)


# -- window sampling ---------------------------------------------------------

def sample_windows(ds: MotionDataset, batch, H, seed=None, rng=None, as_obs=True):
    """Draw ``batch`` windows of ``H`` consecutive frames, uniform over start indices.

    Returns ``(batch, H, 27)`` discriminator observations (or raw core frames
    when ``as_obs`` is false) and the ``(batch, 2)`` clip/start indices.
    """
    for name, c in zip(ds.names, ds.clips):
        if len(c) < H:
            raise DatasetError(f"clip {name!r} has {len(c)} frames, shorter than H={H}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    counts = np.array([len(c) - H + 1 for c in ds.clips])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    flat = rng.integers(0, offsets[-1], size=batch)
    clip_idx = np.searchsorted(offsets, flat, side="right") - 1
    start = flat - offsets[clip_idx]
    views = [ds.discriminator_obs(i) if as_obs else ds.core(i) for i in range(len(ds.clips))]
    out = np.stack([views[c][s:s + H] for c, s in zip(clip_idx, start)]) if batch else \
        np.zeros((0, H, DISC_OBS_DIM if as_obs else ds.core_dim))
    return out, np.stack([clip_idx, start], axis=1)


def all_windows(ds: MotionDataset, H):
    """Every valid window of every clip as ``(n, H, 27)`` discriminator observations."""
    views = [ds.discriminator_obs(i) for i in range(len(ds.clips))]
    return np.concatenate([np.stack([v[s:s + H] for s in range(len(v) - H + 1)])
                           for v in views if len(v) >= H])


# -- rollout export ----------------------------------------------------------

def export_rollouts(trajectories, parent: MotionDataset | None = None, min_length=2, dt=None,
                    provenance=None, dof=9, extra_channels=()):
    """Turn surviving rollout logs into the next-iteration dataset.

    Each trajectory is a mapping with a ``frames`` array in dataset layout and
    a boolean ``fallen``; an optional ``eligible`` flag lets callers apply
    further gates.  Fallen or short episodes are dropped.
    """
    keep, names = [], []
    for i, tr in enumerate(trajectories):
        frames = np.asarray(tr["frames"], dtype=float)
        if tr.get("fallen", False) or not tr.get("eligible", True) or len(frames) < min_length:
            continue
        keep.append(frames)
        names.append(tr.get("name", f"rollout{i:03d}"))
    if not keep:
        raise DatasetError("no eligible rollouts to export")
    if parent is not None:
        dt = parent.dt if dt is None else dt
        dof = parent.dof
        gait = parent.gait
        iteration = parent.iteration + 1
    else:
        gait, iteration = "policy", 1
    prov = dict(provenance or {})
    if parent is not None:
        prov["parent_hash"] = parent.content_hash()
    channels = core_channels(dof) + list(extra_channels)
    return MotionDataset(keep, dt, dof, gait, iteration, names, channels, prov)


# -- file formats ------------------------------------------------------------

def encode_binary(ds: MotionDataset) -> bytes:
    meta = json.dumps(ds.meta, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", FORMAT_VERSION, len(meta)))
    buf.write(meta)
    for c in ds.clips:
        buf.write(c.astype("<f8").tobytes())
    return buf.getvalue()


def decode_binary(data: bytes) -> MotionDataset:
    if data[:len(MAGIC)] != MAGIC:
        raise DatasetError("not a motion dataset file (bad magic)")
    k = len(MAGIC)
    try:
        version, n = struct.unpack_from("<HI", data, k)
    except struct.error:
        raise DatasetError("file truncated inside header") from None
    if version != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset version {version}")
    k += struct.calcsize("<HI")
    try:
        meta = json.loads(data[k:k + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"unreadable metadata block: {exc}") from None
    k += n
    width = len(meta["channels"])
    clips = []
    for length in meta["lengths"]:
        size = 8 * length * width
        if k + size > len(data):
            raise DatasetError("file truncated inside clip data")
        clips.append(np.frombuffer(data[k:k + size], dtype="<f8").reshape(length, width).copy())
        k += size
    if k != len(data):
        raise DatasetError("trailing bytes after last clip")
    return _from_meta(meta, clips)


def encode_text(ds: MotionDataset) -> str:
    lines = [f"{TEXT_MAGIC} {FORMAT_VERSION}", "#meta " + json.dumps(ds.meta, sort_keys=True)]
    for ci, c in enumerate(ds.clips):
        for row in c:
            lines.append(",".join([str(ci)] + [repr(float(v)) for v in row]))
    return "\n".join(lines) + "\n"


def decode_text(text: str) -> MotionDataset:
    lines = text.splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 2 or head[0] != TEXT_MAGIC:
        raise DatasetError("not a motion dataset text file (bad magic)")
    if int(head[1]) != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset version {head[1]}")
    meta = json.loads(lines[1][len("#meta "):])
    rows = [[float(x) for x in ln.split(",")] for ln in lines[2:] if ln]
    arr = np.array(rows).reshape(len(rows), 1 + len(meta["channels"]))
    clips = [arr[arr[:, 0] == ci, 1:] for ci in range(len(meta["lengths"]))]
    if [len(c) for c in clips] != meta["lengths"]:
        raise DatasetError("clip lengths disagree with metadata")
    return _from_meta(meta, clips)


def _from_meta(meta, clips):
    return MotionDataset(clips, meta["dt"], meta["dof"], meta["gait"], meta["iteration"],
                         meta["names"], meta["channels"], meta["provenance"])


def save_dataset(ds: MotionDataset, path, fmt=None):
    """Write ``ds``; the format follows ``fmt`` or the suffix (``.txt``/``.csv`` is text)."""
    path = Path(path)
    fmt = fmt or ("text" if path.suffix in (".txt", ".csv") else "binary")
    if fmt == "text":
        path.write_text(encode_text(ds))
    elif fmt == "binary":
        path.write_bytes(encode_binary(ds))
    else:
        raise DatasetError(f"unknown format {fmt!r}")
    return path


def load_dataset(path) -> MotionDataset:
    data = Path(path).read_bytes()
    if data.startswith(MAGIC):
        return decode_binary(data)
    return decode_text(data.decode())


# -- fixture gait --------------------------------------------------------------

def fixture_trot_gait(n_clips=2, n_frames=240, dt=1.0 / 48, speed=0.3, freq=2.0,
                      height=0.22, hip_amp=0.3, knee_amp=0.4, seed=0):
    """Hand-made 8-DOF trot used as the origin dataset in tests and demos.

    Diagonal leg pairs swing in antiphase; the trunk moves forward at
    ``speed`` with a small vertical bob.  Clips differ by a random phase.
    """
    rng = np.random.default_rng(seed)
    default = np.array([0.8, -1.6, 0.8, -1.6, -0.8, 1.6, -0.8, 1.6])
    # FL, FR, HL, HR phase offsets for a trot: FL+HR together, FR+HL together
    leg_phase = np.array([0.0, np.pi, np.pi, 0.0])
    clips = []
    for _ in range(n_clips):
        t = np.arange(n_frames) * dt
        ph = 2 * np.pi * freq * t[:, None] + leg_phase + rng.uniform(0, 2 * np.pi)
        front = np.array([1.0, 1.0, -1.0, -1.0])  # rear legs bend the other way
        hip = default[0::2] + front * hip_amp * np.sin(ph)
        knee = default[1::2] - front * knee_amp * np.maximum(np.cos(ph), 0.0)
        q = np.empty((n_frames, 8))
        q[:, 0::2], q[:, 1::2] = hip, knee
        qdot = np.gradient(q, dt, axis=0)
        z = height + 0.005 * np.cos(4 * np.pi * freq * t)
        pos = np.stack([speed * t, np.zeros_like(t), z], axis=1)
        linvel = np.gradient(pos, dt, axis=0)
        quat = np.tile([1.0, 0.0, 0.0, 0.0], (n_frames, 1))
        clips.append(make_frames(pos, quat, linvel, np.zeros((n_frames, 3)), z, q, qdot))
    return MotionDataset(clips, dt, 8, "trot", 0, provenance={"source": "fixture_trot_gait"})
