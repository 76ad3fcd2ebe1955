"""Robot morphology: config loading, validation and the solo9 -> solo8 weld.

A morphology file is TOML with one ``[robot]`` table, one ``[link.<name>]``
table per rigid body and one ``[joint.<name>]`` table per joint.  Field names
are listed in ``LINK_FIELDS``, ``JOINT_FIELDS`` and ``ROBOT_FIELDS``; the
README documents their meaning and units.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import tomli
import tomli_w

ROBOT_FIELDS = ("name", "total_mass", "body_length", "body_width",
                "motor_torque_limit", "base_split")
LINK_FIELDS = ("mass", "inertia", "com", "shape", "size", "foot")
JOINT_FIELDS = ("type", "axis", "parent", "child", "origin", "torque_limit",
                "limits", "damping", "default")

WAIST = "waist"
MASS_TOL = 1e-9


class RobotSpecError(ValueError):
    """Raised when a morphology file cannot be parsed or fails validation.

    ``field`` names the offending table/key, ``line`` is the 1-based line of a
    parse failure when known, ``invariant`` names a violated invariant.
    """

    def __init__(self, message, *, field=None, line=None, invariant=None):
        self.field = field
        self.line = line
        self.invariant = invariant
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class LinkSpec:
    name: str
    mass: float
    inertia: tuple  # principal moments about the COM, link frame
    com: tuple
    shape: str  # "box" or "rod"
    size: tuple  # box: (lx, ly, lz); rod: (length, radius), rod hangs along -z
    foot: bool = False

    def contact_points(self):
        """Contact probe points in the link frame (and the probe radius)."""
        if self.shape == "box":
            lx, ly, lz = self.size
            pts = [(sx * lx / 2 + self.com[0], sy * ly / 2, sz * lz / 2)
                   for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
            return np.array(pts), 0.0
        length, radius = self.size
        return np.array([(0.0, 0.0, -length)]), radius


@dataclass(frozen=True)
class JointSpec:
    name: str
    type: str  # "revolute" or "fixed"
    axis: tuple
    parent: int
    child: int
    origin: tuple  # joint location in the parent link frame
    torque_limit: float
    limits: tuple | None = None
    damping: float = 0.0
    default: float = 0.0

    @property
    def actuated(self):
        return self.type == "revolute"


@dataclass(frozen=True)
class RobotSpec:
    name: str
    links: tuple
    joints: tuple
    base_split_index: int
    total_mass: float
    body_length: float
    body_width: float
    motor_torque_limit: float = 2.7

    @property
    def actuated_joints(self):
        return tuple(j for j in self.joints if j.actuated)

    @property
    def n_actuated(self):
        return len(self.actuated_joints)

    @property
    def joint_names(self):
        return tuple(j.name for j in self.actuated_joints)

    @property
    def default_pose(self):
        return np.array([j.default for j in self.actuated_joints])

    @property
    def torque_limits(self):
        return np.array([j.torque_limit for j in self.actuated_joints])

    def link_index(self, name):
        for i, link in enumerate(self.links):
            if link.name == name:
                return i
        raise KeyError(name)

    def joint(self, name):
        for j in self.joints:
            if j.name == name:
                return j
        raise KeyError(name)

    @property
    def has_waist(self):
        return any(j.name == WAIST and j.actuated for j in self.joints)

    @property
    def waist_index(self):
        """Index of the waist in the actuated-joint vector, or None."""
        names = self.joint_names
        return names.index(WAIST) if WAIST in names else None

    @property
    def foot_links(self):
        return tuple(i for i, link in enumerate(self.links) if link.foot)

    def topological_order(self):
        """Links ordered so that every parent precedes its children."""
        children = {i: [] for i in range(len(self.links))}
        for j in self.joints:
            children[j.parent].append(j.child)
        order, stack = [], [0]
        while stack:
            i = stack.pop(0)
            order.append(i)
            stack = children[i] + stack
        return order


def _check(cond, message, invariant, field=None):
    if not cond:
        raise RobotSpecError(message, field=field, invariant=invariant)


def validate(spec: RobotSpec) -> RobotSpec:
    n = len(spec.links)
    _check(spec.total_mass > 0, "total_mass must be positive", "positive_mass",
           "robot.total_mass")
    for link in spec.links:
        _check(link.mass > 0, f"link {link.name!r} has non-positive mass",
               "positive_mass", f"link.{link.name}.mass")
        _check(all(v > 0 for v in link.inertia),
               f"link {link.name!r} inertia must be positive", "positive_inertia",
               f"link.{link.name}.inertia")
    mass_sum = sum(link.mass for link in spec.links)
    _check(abs(mass_sum - spec.total_mass) <= MASS_TOL,
           f"link masses sum to {mass_sum!r}, total_mass is {spec.total_mass!r}",
           "mass_bookkeeping", "robot.total_mass")

    _check(len(spec.joints) == n - 1,
           f"{n} links need exactly {n - 1} joints, got {len(spec.joints)}",
           "tree")
    seen_child = set()
    for j in spec.joints:
        _check(0 <= j.parent < n and 0 <= j.child < n,
               f"joint {j.name!r} references an unknown link", "tree", f"joint.{j.name}")
        _check(j.child != 0, f"joint {j.name!r} has the root link as child", "tree",
               f"joint.{j.name}.child")
        _check(j.child not in seen_child, f"link {spec.links[j.child].name!r} has two parents",
               "tree", f"joint.{j.name}.child")
        seen_child.add(j.child)
        axis = np.asarray(j.axis, dtype=float)
        _check(abs(np.linalg.norm(axis) - 1.0) < 1e-9, f"joint {j.name!r} axis is not unit length",
               "unit_axis", f"joint.{j.name}.axis")
        _check(j.type in ("revolute", "fixed"), f"joint {j.name!r} has unknown type {j.type!r}",
               "joint_type", f"joint.{j.name}.type")
        _check(j.torque_limit >= 0, f"joint {j.name!r} torque_limit is negative",
               "torque_limit", f"joint.{j.name}.torque_limit")
        if j.limits is not None:
            _check(j.limits[0] < j.limits[1], f"joint {j.name!r} limits are empty",
                   "limits", f"joint.{j.name}.limits")
    _check(len(spec.topological_order()) == n, "some link is unreachable from the root",
           "tree")

    if any(j.name == WAIST for j in spec.joints):
        waist = spec.joint(WAIST)
        _check(waist.limits is None, "waist joint must not have position limits",
               "unlimited_waist", "joint.waist.limits")
        if waist.actuated:
            _check(abs(waist.torque_limit - 2.0 * spec.motor_torque_limit) < 1e-12,
                   "waist torque_limit must be twice motor_torque_limit (two motors)",
                   "waist_double_torque", "joint.waist.torque_limit")
    _check(0 < spec.base_split_index < n, "base_split must name a non-root link",
           "base_split", "robot.base_split")
    _check(len(spec.foot_links) == 4, "exactly four links must be marked foot = true",
           "four_feet")
    return spec


def _tuple(value, n, where):
    try:
        out = tuple(float(v) for v in value)
    except TypeError:
        raise RobotSpecError("expected a list of numbers", field=where) from None
    if len(out) != n:
        raise RobotSpecError(f"expected {n} numbers, got {len(out)}", field=where)
    return out


def _require(table, key, where):
    if key not in table:
        raise RobotSpecError("missing required field", field=f"{where}.{key}")
    return table[key]


def _unknown_keys(table, allowed, where):
    extra = set(table) - set(allowed)
    if extra:
        raise RobotSpecError(f"unknown field(s) {sorted(extra)}", field=where)


def spec_from_dict(doc: dict) -> RobotSpec:
    robot = _require(doc, "robot", "")
    _unknown_keys(robot, ROBOT_FIELDS, "robot")
    link_tables = doc.get("link", {})
    joint_tables = doc.get("joint", {})
    if not link_tables:
        raise RobotSpecError("no [link.*] tables", field="link")

    links = []
    for name, t in link_tables.items():
        where = f"link.{name}"
        _unknown_keys(t, LINK_FIELDS, where)
        shape = _require(t, "shape", where)
        if shape not in ("box", "rod"):
            raise RobotSpecError(f"unknown shape {shape!r}", field=f"{where}.shape")
        links.append(LinkSpec(
            name=name,
            mass=float(_require(t, "mass", where)),
            inertia=_tuple(_require(t, "inertia", where), 3, f"{where}.inertia"),
            com=_tuple(_require(t, "com", where), 3, f"{where}.com"),
            shape=shape,
            size=_tuple(_require(t, "size", where), 3 if shape == "box" else 2,
                        f"{where}.size"),
            foot=bool(t.get("foot", False)),
        ))
    index = {link.name: i for i, link in enumerate(links)}

    joints = []
    for name, t in joint_tables.items():
        where = f"joint.{name}"
        _unknown_keys(t, JOINT_FIELDS, where)
        parent, child = _require(t, "parent", where), _require(t, "child", where)
        for key, val in (("parent", parent), ("child", child)):
            if val not in index:
                raise RobotSpecError(f"unknown link {val!r}", field=f"{where}.{key}")
        limits = t.get("limits")
        joints.append(JointSpec(
            name=name,
            type=t.get("type", "revolute"),
            axis=_tuple(_require(t, "axis", where), 3, f"{where}.axis"),
            parent=index[parent],
            child=index[child],
            origin=_tuple(_require(t, "origin", where), 3, f"{where}.origin"),
            torque_limit=float(t.get("torque_limit", 0.0)),
            limits=None if limits is None else _tuple(limits, 2, f"{where}.limits"),
            damping=float(t.get("damping", 0.0)),
            default=float(t.get("default", 0.0)),
        ))

    split = _require(robot, "base_split", "robot")
    if split not in index:
        raise RobotSpecError(f"unknown link {split!r}", field="robot.base_split")
    spec = RobotSpec(
        name=str(_require(robot, "name", "robot")),
        links=tuple(links),
        joints=tuple(joints),
        base_split_index=index[split],
        total_mass=float(_require(robot, "total_mass", "robot")),
        body_length=float(_require(robot, "body_length", "robot")),
        body_width=float(_require(robot, "body_width", "robot")),
        motor_torque_limit=float(robot.get("motor_torque_limit", 2.7)),
    )
    return validate(spec)


def parse_robot_spec(text: str) -> RobotSpec:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise RobotSpecError(f"parse error: {exc}",
                             line=int(m.group(1)) if m else None) from None
    return spec_from_dict(doc)


def load_robot_spec(path) -> RobotSpec:
    """Load and validate a morphology file.

    ``path`` may also be one of the bundled names ``"solo9"`` / ``"solo8"``.
    """
    p = Path(path)
    if not p.exists() and str(path) in ("solo9", "solo8"):
        text = resources.files("solo9.data").joinpath(f"{path}.toml").read_text()
    else:
        text = p.read_text()
    return parse_robot_spec(text)


def spec_to_dict(spec: RobotSpec) -> dict:
    doc = {"robot": {
        "name": spec.name,
        "total_mass": spec.total_mass,
        "body_length": spec.body_length,
        "body_width": spec.body_width,
        "motor_torque_limit": spec.motor_torque_limit,
        "base_split": spec.links[spec.base_split_index].name,
    }}
    doc["link"] = {}
    for link in spec.links:
        t = {"mass": link.mass, "inertia": list(link.inertia), "com": list(link.com),
             "shape": link.shape, "size": list(link.size)}
        if link.foot:
            t["foot"] = True
        doc["link"][link.name] = t
    doc["joint"] = {}
    for j in spec.joints:
        t = {"type": j.type, "axis": list(j.axis), "parent": spec.links[j.parent].name,
             "child": spec.links[j.child].name, "origin": list(j.origin),
             "torque_limit": j.torque_limit, "damping": j.damping, "default": j.default}
        if j.limits is not None:
            t["limits"] = list(j.limits)
        doc["joint"][j.name] = t
    return doc


def dump_robot_spec(spec: RobotSpec) -> str:
    return tomli_w.dumps(spec_to_dict(spec))


def make_solo8_from_solo9(spec: RobotSpec) -> RobotSpec:
    """Weld the waist at 0 rad, leaving masses and geometry untouched."""
    if not spec.has_waist:
        raise RobotSpecError("spec has no actuated waist joint to weld", field="joint.waist",
                             invariant="has_waist")
    joints = tuple(
        dataclasses.replace(j, type="fixed", default=0.0, torque_limit=0.0)
        if j.name == WAIST else j
        for j in spec.joints
    )
    return validate(dataclasses.replace(spec, name=f"{spec.name}_fixed", joints=joints))
