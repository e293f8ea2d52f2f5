"""Scenes of articulated entities in a bounded 2-D world.

Geometry is deliberately simple: every entity is a Box or a Disk, boxes are
axis-aligned after snapping their heading to the nearest quarter turn, and all
queries are exact on that representation.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .errors import (
    InvalidScene,
    JointOutOfRange,
    NotAContainer,
    OutOfWorldBounds,
    ScaleOutOfBounds,
    UnknownEntity,
)

PENETRATION_TOL = 1e-3
RESCALE_BOUNDS = (0.25, 4.0)
_EPS = 1e-12


def sig9(x: float) -> float:
    """Round to 9 significant digits (the serialization precision)."""
    return float(f"{x:.9g}")


def normalize_angle(theta: float) -> float:
    t = math.fmod(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    elif t > math.pi:
        t -= 2.0 * math.pi
    return t


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise InvalidScene(f"non-finite pose {self}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def to_dict(self):
        return {"x": sig9(self.x), "y": sig9(self.y), "theta": sig9(self.theta)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["x"], d["y"], d.get("theta", 0.0))


@dataclass(frozen=True)
class Box:
    half_w: float
    half_h: float

    def __post_init__(self):
        if not (self.half_w > 0 and self.half_h > 0):
            raise InvalidScene(f"box extents must be positive: {self}")

    def half_extents(self, scale=1.0, theta=0.0):
        hw, hh = self.half_w * scale, self.half_h * scale
        if abs(math.sin(theta)) > abs(math.cos(theta)):
            return hh, hw
        return hw, hh

    def scaled(self, f):
        return Box(self.half_w * f, self.half_h * f)

    def to_dict(self):
        return {"type": "box", "half_w": sig9(self.half_w), "half_h": sig9(self.half_h)}


@dataclass(frozen=True)
class Disk:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidScene(f"disk radius must be positive: {self}")

    def half_extents(self, scale=1.0, theta=0.0):
        r = self.radius * scale
        return r, r

    def scaled(self, f):
        return Disk(self.radius * f)

    def to_dict(self):
        return {"type": "disk", "radius": sig9(self.radius)}


Shape = Union[Box, Disk]


def shape_from_dict(d) -> Shape:
    if d["type"] == "box":
        return Box(d["half_w"], d["half_h"])
    if d["type"] == "disk":
        return Disk(d["radius"])
    raise InvalidScene(f"unknown shape type {d['type']!r}")


class Affordance(str, enum.Enum):
    GRASPABLE = "GRASPABLE"
    CONTAINER = "CONTAINER"
    HEAT_SOURCE = "HEAT_SOURCE"
    SUPPORT = "SUPPORT"
    OPENABLE = "OPENABLE"
    SLIDABLE = "SLIDABLE"


class JointKind(str, enum.Enum):
    PRISMATIC = "PRISMATIC"
    REVOLUTE = "REVOLUTE"


@dataclass(frozen=True)
class JointSpec:
    kind: JointKind
    lo: float
    hi: float
    value: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidScene(f"joint range must satisfy lo < hi: {self}")
        if not self.lo - _EPS <= self.value <= self.hi + _EPS:
            raise JointOutOfRange(f"joint value {self.value} outside [{self.lo}, {self.hi}]")

    def to_dict(self):
        return {"kind": self.kind.value, "lo": sig9(self.lo), "hi": sig9(self.hi),
                "value": sig9(self.value)}

    @classmethod
    def from_dict(cls, d):
        return cls(JointKind(d["kind"]), d["lo"], d["hi"], d["value"])


@dataclass(frozen=True)
class AssetTemplate:
    """Catalog entry: everything about an entity except where it is."""

    name: str
    shape: Shape
    mass: float
    affordances: frozenset = frozenset()
    inner_shape: Optional[Shape] = None
    joints: tuple = ()

    def to_dict(self):
        return {
            "name": self.name,
            "shape": self.shape.to_dict(),
            "inner_shape": None if self.inner_shape is None else self.inner_shape.to_dict(),
            "mass": sig9(self.mass),
            "affordances": sorted(a.value for a in self.affordances),
            "joints": [j.to_dict() for j in self.joints],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            name=d["name"],
            shape=shape_from_dict(d["shape"]),
            inner_shape=None if d.get("inner_shape") is None else shape_from_dict(d["inner_shape"]),
            mass=d["mass"],
            affordances=frozenset(Affordance(a) for a in d.get("affordances", ())),
            joints=tuple(JointSpec.from_dict(j) for j in d.get("joints", ())),
        )


@dataclass(frozen=True)
class Entity:
    id: str
    asset: str
    shape: Shape
    pose: Pose2
    mass: float
    affordances: frozenset = frozenset()
    inner_shape: Optional[Shape] = None
    scale: float = 1.0
    joints: tuple = ()
    # id of the support/container this entity rests on or in; None = on the floor
    parent: Optional[str] = None

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidScene(f"{self.id}: scale must be positive")
        if not self.mass > 0:
            raise InvalidScene(f"{self.id}: mass must be positive")
        has_container = Affordance.CONTAINER in self.affordances
        if has_container != (self.inner_shape is not None):
            raise InvalidScene(f"{self.id}: inner_shape present iff CONTAINER")
        if self.inner_shape is not None:
            ow, oh = self.shape.half_extents()
            iw, ih = self.inner_shape.half_extents()
            if iw > ow + _EPS or ih > oh + _EPS:
                raise InvalidScene(f"{self.id}: inner extents exceed outer extents")

    @classmethod
    def from_template(cls, entity_id, template: AssetTemplate, pose: Pose2, scale=1.0, parent=None):
        return cls(
            id=entity_id,
            asset=template.name,
            shape=template.shape,
            pose=pose,
            mass=template.mass,
            affordances=template.affordances,
            inner_shape=template.inner_shape,
            scale=scale,
            joints=template.joints,
            parent=parent,
        )

    def half_extents(self):
        return self.shape.half_extents(self.scale, self.pose.theta)

    def inner_half_extents(self):
        if self.inner_shape is None:
            raise NotAContainer(self.id)
        return self.inner_shape.half_extents(self.scale, self.pose.theta)

    def effective_shape(self) -> Shape:
        """Scaled shape, axis-aligned in the world frame."""
        if isinstance(self.shape, Disk):
            return self.shape.scaled(self.scale)
        hw, hh = self.half_extents()
        return Box(hw, hh)

    def has(self, affordance) -> bool:
        return Affordance(affordance) in self.affordances

    def to_dict(self):
        return {
            "id": self.id,
            "asset": self.asset,
            "shape": self.shape.to_dict(),
            "inner_shape": None if self.inner_shape is None else self.inner_shape.to_dict(),
            "pose": self.pose.to_dict(),
            "scale": sig9(self.scale),
            "mass": sig9(self.mass),
            "affordances": sorted(a.value for a in self.affordances),
            "joints": [j.to_dict() for j in self.joints],
            "parent": self.parent,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=d["id"],
            asset=d["asset"],
            shape=shape_from_dict(d["shape"]),
            inner_shape=None if d.get("inner_shape") is None else shape_from_dict(d["inner_shape"]),
            pose=Pose2.from_dict(d["pose"]),
            scale=d.get("scale", 1.0),
            mass=d["mass"],
            affordances=frozenset(Affordance(a) for a in d.get("affordances", ())),
            joints=tuple(JointSpec.from_dict(j) for j in d.get("joints", ())),
            parent=d.get("parent"),
        )


@dataclass(frozen=True)
class RobotModel:
    base_radius: float = 0.15
    reach: float = 0.9
    torque_limit: float = 10.0
    base_pose: Pose2 = Pose2(0.5, 1.5, 0.0)

    def __post_init__(self):
        if not (self.reach > self.base_radius > 0):
            raise InvalidScene("robot requires reach > base_radius > 0")
        if not self.torque_limit > 0:
            raise InvalidScene("robot torque_limit must be positive")

    def to_dict(self):
        return {"base_radius": sig9(self.base_radius), "reach": sig9(self.reach),
                "torque_limit": sig9(self.torque_limit), "base_pose": self.base_pose.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["base_radius"], d["reach"], d["torque_limit"], Pose2.from_dict(d["base_pose"]))


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise InvalidScene(f"degenerate rectangle {self}")

    def contains(self, x, y, tol=1e-9) -> bool:
        return (self.xmin - tol <= x <= self.xmax + tol) and (self.ymin - tol <= y <= self.ymax + tol)

    @property
    def diagonal(self):
        return math.hypot(self.xmax - self.xmin, self.ymax - self.ymin)

    def to_dict(self):
        return {"xmin": sig9(self.xmin), "ymin": sig9(self.ymin),
                "xmax": sig9(self.xmax), "ymax": sig9(self.ymax)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["xmin"], d["ymin"], d["xmax"], d["ymax"])


@dataclass(frozen=True)
class SceneGraph:
    world_bounds: Rect
    entities: tuple = ()
    robot: RobotModel = field(default_factory=RobotModel)

    def __post_init__(self):
        ents = tuple(sorted(self.entities, key=lambda e: e.id))
        ids = [e.id for e in ents]
        if len(set(ids)) != len(ids):
            raise InvalidScene("duplicate entity ids")
        object.__setattr__(self, "entities", ents)
        object.__setattr__(self, "_index", {e.id: e for e in ents})
        self.validate()

    def validate(self):
        b = self.world_bounds
        diag = b.diagonal
        for e in self.entities:
            if not b.contains(e.pose.x, e.pose.y):
                raise OutOfWorldBounds(f"{e.id} at ({e.pose.x:.3f}, {e.pose.y:.3f}) outside world")
            hw, hh = e.half_extents()
            if max(hw, hh) > diag:
                raise InvalidScene(f"{e.id}: extents exceed world diagonal")
            if e.parent is not None and e.parent not in self._index:
                raise InvalidScene(f"{e.id}: parent {e.parent!r} missing")
        rp = self.robot.base_pose
        if not b.contains(rp.x, rp.y):
            raise OutOfWorldBounds("robot base outside world")

    def __contains__(self, entity_id):
        return entity_id in self._index

    def get(self, entity_id) -> Entity:
        try:
            return self._index[entity_id]
        except KeyError:
            raise UnknownEntity(entity_id) from None

    @property
    def ids(self):
        return tuple(e.id for e in self.entities)

    def children(self, entity_id):
        return tuple(e for e in self.entities if e.parent == entity_id)

    def replace_entity(self, entity: Entity) -> "SceneGraph":
        self.get(entity.id)
        ents = tuple(entity if e.id == entity.id else e for e in self.entities)
        return SceneGraph(self.world_bounds, ents, self.robot)

    def add_entity(self, entity: Entity) -> "SceneGraph":
        if entity.id in self._index:
            raise InvalidScene(f"duplicate entity id {entity.id!r}")
        return SceneGraph(self.world_bounds, self.entities + (entity,), self.robot)

    def remove_entity(self, entity_id) -> "SceneGraph":
        self.get(entity_id)
        ents = []
        for e in self.entities:
            if e.id == entity_id:
                continue
            if e.parent == entity_id:
                e = replace(e, parent=None)
            ents.append(e)
        return SceneGraph(self.world_bounds, tuple(ents), self.robot)

    def with_robot(self, robot: RobotModel) -> "SceneGraph":
        return SceneGraph(self.world_bounds, self.entities, robot)

    def to_dict(self):
        return {
            "world_bounds": self.world_bounds.to_dict(),
            "robot": self.robot.to_dict(),
            "entities": [e.to_dict() for e in self.entities],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            Rect.from_dict(d["world_bounds"]),
            tuple(Entity.from_dict(e) for e in d["entities"]),
            RobotModel.from_dict(d["robot"]),
        )


# --------------------------------------------------------------------------
# Geometry

def signed_distance(entity: Entity, px, py):
    """Signed distance from points to the entity's effective shape (<0 inside)."""
    px = np.asarray(px, dtype=float) - entity.pose.x
    py = np.asarray(py, dtype=float) - entity.pose.y
    if isinstance(entity.shape, Disk):
        return np.hypot(px, py) - entity.shape.radius * entity.scale
    hw, hh = entity.half_extents()
    qx = np.abs(px) - hw
    qy = np.abs(py) - hh
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return outside + inside


def _disk_disk(a: Entity, b: Entity):
    d = math.hypot(a.pose.x - b.pose.x, a.pose.y - b.pose.y)
    return a.shape.radius * a.scale + b.shape.radius * b.scale - d


def _box_box(a: Entity, b: Entity):
    aw, ah = a.half_extents()
    bw, bh = b.half_extents()
    ox = aw + bw - abs(a.pose.x - b.pose.x)
    oy = ah + bh - abs(a.pose.y - b.pose.y)
    if ox > 0 and oy > 0:
        return min(ox, oy)
    return -math.hypot(max(0.0, -ox), max(0.0, -oy))


def _box_disk(box: Entity, disk: Entity):
    s = float(signed_distance(box, disk.pose.x, disk.pose.y))
    return disk.shape.radius * disk.scale - s


def entity_overlap(a: Entity, b: Entity) -> float:
    """Signed penetration depth: >0 overlapping by that much, <=0 separated by |value|."""
    if a.id > b.id:
        a, b = b, a
    a_disk, b_disk = isinstance(a.shape, Disk), isinstance(b.shape, Disk)
    if a_disk and b_disk:
        return _disk_disk(a, b)
    if not a_disk and not b_disk:
        return _box_box(a, b)
    return _box_disk(b, a) if a_disk else _box_disk(a, b)


def query_overlap(scene: SceneGraph, a: str, b: str) -> float:
    return entity_overlap(scene.get(a), scene.get(b))


def fits_inside(inner, item, clearance: float) -> bool:
    iw, ih = inner
    a, b = item
    tol = 1e-12
    return ((a + clearance <= iw + tol and b + clearance <= ih + tol)
            or (b + clearance <= iw + tol and a + clearance <= ih + tol))


def query_containment(container: Entity, item: Entity, clearance: float) -> bool:
    """True iff the item fits the container cavity, with `clearance` on every side.

    Only the two axis-aligned orientations (0 and 90 degrees) are tried.
    """
    if container.inner_shape is None:
        raise NotAContainer(container.id)
    if clearance < 0:
        raise ValueError("clearance must be non-negative")
    return fits_inside(container.inner_half_extents(), item.half_extents(), clearance)


def containment_slack(container: Entity, item: Entity) -> float:
    """Largest clearance at which the item still fits (negative if it never fits)."""
    iw, ih = container.inner_half_extents()
    a, b = item.half_extents()
    return max(min(iw - a, ih - b), min(iw - b, ih - a))


# --------------------------------------------------------------------------
# Mutations (the static repair vocabulary)

@dataclass(frozen=True)
class SwapAsset:
    target: str
    query: tuple
    template: AssetTemplate
    kind = "SWAP_ASSET"


@dataclass(frozen=True)
class SpawnAsset:
    entity_id: str
    query: str
    template: AssetTemplate
    pose: Pose2
    parent: Optional[str] = None
    kind = "SPAWN_ASSET"


@dataclass(frozen=True)
class RemoveAsset:
    target: str
    kind = "REMOVE_ASSET"


@dataclass(frozen=True)
class SetJoint:
    target: str
    index: int
    value: float
    kind = "SET_JOINT"


@dataclass(frozen=True)
class TransformPose:
    target: str
    dx: float
    dy: float
    dtheta: float = 0.0
    parent: Optional[str] = None
    reparent: bool = False
    kind = "TRANSFORM_POSE"


@dataclass(frozen=True)
class Rescale:
    target: str
    factor: float
    kind = "RESCALE"


@dataclass(frozen=True)
class ResetRobot:
    pose: Pose2
    kind = "RESET_ROBOT"


SceneMutation = Union[SwapAsset, SpawnAsset, RemoveAsset, SetJoint, TransformPose, Rescale, ResetRobot]


def mutate(scene: SceneGraph, op) -> SceneGraph:
    """Apply one mutation and return a new, re-validated scene."""
    if isinstance(op, SwapAsset):
        e = scene.get(op.target)
        t = op.template
        new = replace(e, asset=t.name, shape=t.shape, inner_shape=t.inner_shape, mass=t.mass,
                      affordances=t.affordances, joints=t.joints)
        return scene.replace_entity(new)
    if isinstance(op, SpawnAsset):
        ent = Entity.from_template(op.entity_id, op.template, op.pose, parent=op.parent)
        return scene.add_entity(ent)
    if isinstance(op, RemoveAsset):
        return scene.remove_entity(op.target)
    if isinstance(op, SetJoint):
        e = scene.get(op.target)
        if not 0 <= op.index < len(e.joints):
            raise JointOutOfRange(f"{e.id} has no joint {op.index}")
        j = e.joints[op.index]
        if not j.lo - _EPS <= op.value <= j.hi + _EPS:
            raise JointOutOfRange(f"{op.value} outside [{j.lo}, {j.hi}]")
        joints = list(e.joints)
        joints[op.index] = replace(j, value=op.value)
        return scene.replace_entity(replace(e, joints=tuple(joints)))
    if isinstance(op, TransformPose):
        e = scene.get(op.target)
        p = Pose2(e.pose.x + op.dx, e.pose.y + op.dy, e.pose.theta + op.dtheta)
        if not scene.world_bounds.contains(p.x, p.y):
            raise OutOfWorldBounds(f"{e.id} would leave the world")
        parent = op.parent if op.reparent else e.parent
        return scene.replace_entity(replace(e, pose=p, parent=parent))
    if isinstance(op, Rescale):
        lo, hi = RESCALE_BOUNDS
        if not lo <= op.factor <= hi:
            raise ScaleOutOfBounds(f"factor {op.factor} outside [{lo}, {hi}]")
        e = scene.get(op.target)
        return scene.replace_entity(replace(e, scale=e.scale * op.factor))
    if isinstance(op, ResetRobot):
        if not scene.world_bounds.contains(op.pose.x, op.pose.y):
            raise OutOfWorldBounds("robot pose outside world")
        return scene.with_robot(replace(scene.robot, base_pose=op.pose))
    raise TypeError(f"not a scene mutation: {op!r}")
