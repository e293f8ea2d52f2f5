"""The task tuple (instruction, scene, policy spec), goal predicates, repair
operations and the semantic-cost ledger."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .errors import DanglingReference, LedgerMismatch
from .scene import (
    AssetTemplate,
    Pose2,
    Rect,
    RemoveAsset,
    ResetRobot,
    Rescale,
    SceneGraph,
    SetJoint,
    SpawnAsset,
    SwapAsset,
    TransformPose,
    mutate,
    sig9,
)

# --------------------------------------------------------------------------
# Goal predicates


@dataclass(frozen=True)
class On:
    item: str
    support: str
    kind = "ON"

    def ids(self):
        return (self.item, self.support)

    def holds(self, scene, held):
        return held != self.item and self.item in scene and scene.get(self.item).parent == self.support


@dataclass(frozen=True)
class Inside:
    item: str
    container: str
    kind = "INSIDE"

    def ids(self):
        return (self.item, self.container)

    def holds(self, scene, held):
        return held != self.item and self.item in scene and scene.get(self.item).parent == self.container


@dataclass(frozen=True)
class JointAt:
    entity: str
    index: int
    target: float
    tol: float
    kind = "JOINT_AT"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("JOINT_AT tolerance must be positive")

    def ids(self):
        return (self.entity,)

    def holds(self, scene, held):
        if self.entity not in scene:
            return False
        joints = scene.get(self.entity).joints
        if self.index >= len(joints):
            return False
        return abs(joints[self.index].value - self.target) <= self.tol + 1e-12


@dataclass(frozen=True)
class Holding:
    item: str
    kind = "HOLDING"

    def ids(self):
        return (self.item,)

    def holds(self, scene, held):
        return held == self.item


@dataclass(frozen=True)
class AtRegion:
    item: str
    region: Rect
    kind = "AT_REGION"

    def ids(self):
        return (self.item,)

    def holds(self, scene, held):
        if held == self.item or self.item not in scene:
            return False
        p = scene.get(self.item).pose
        return self.region.contains(p.x, p.y, tol=0.0)


GoalPredicate = Union[On, Inside, JointAt, Holding, AtRegion]


def goal_to_dict(g):
    if isinstance(g, On):
        return {"kind": "ON", "item": g.item, "support": g.support}
    if isinstance(g, Inside):
        return {"kind": "INSIDE", "item": g.item, "container": g.container}
    if isinstance(g, JointAt):
        return {"kind": "JOINT_AT", "entity": g.entity, "index": g.index,
                "target": sig9(g.target), "tol": sig9(g.tol)}
    if isinstance(g, Holding):
        return {"kind": "HOLDING", "item": g.item}
    if isinstance(g, AtRegion):
        return {"kind": "AT_REGION", "item": g.item, "region": g.region.to_dict()}
    raise TypeError(g)


def goal_from_dict(d):
    k = d["kind"]
    if k == "ON":
        return On(d["item"], d["support"])
    if k == "INSIDE":
        return Inside(d["item"], d["container"])
    if k == "JOINT_AT":
        return JointAt(d["entity"], d["index"], d["target"], d["tol"])
    if k == "HOLDING":
        return Holding(d["item"])
    if k == "AT_REGION":
        return AtRegion(d["item"], Rect.from_dict(d["region"]))
    raise ValueError(f"unknown goal kind {k!r}")


# --------------------------------------------------------------------------
# Instruction


def display_name(asset: str) -> str:
    return asset.replace("_", " ")


@dataclass(frozen=True)
class Instruction:
    """Surface text plus ordered milestones.

    `pattern`, `slots` and `schema` let the instruction be re-instantiated after
    a scene edit (e.g. an asset swap) changes what the slots refer to.
    slots: ((slot, entity_id, asset), ...)
    schema: milestone templates, each a tuple starting with the goal kind and
    naming slots instead of ids.
    """

    text: str
    milestones: tuple
    pattern: str = ""
    slots: tuple = ()
    schema: tuple = ()
    verb: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("instruction text must be non-empty")
        if len(self.milestones) < 1:
            raise ValueError("instruction needs at least one milestone")

    def slot_id(self, slot):
        for name, eid, _ in self.slots:
            if name == slot:
                return eid
        raise KeyError(slot)

    def slot_asset(self, slot):
        for name, _, asset in self.slots:
            if name == slot:
                return asset
        raise KeyError(slot)

    def referenced_ids(self):
        out = []
        for g in self.milestones:
            for i in g.ids():
                if i not in out:
                    out.append(i)
        return tuple(out)

    @classmethod
    def build(cls, pattern, slots, schema, verb, scene):
        return cls("-", (Holding("-"),), pattern, tuple(slots), tuple(schema), verb).refresh(scene)

    def refresh(self, scene: SceneGraph) -> "Instruction":
        """Re-instantiate text and milestones from the current scene."""
        if not self.pattern:
            return self
        slots = []
        names = {}
        for slot, eid, asset in self.slots:
            if eid in scene:
                asset = scene.get(eid).asset
            slots.append((slot, eid, asset))
            names[slot] = display_name(asset)
        ids = {slot: eid for slot, eid, _ in slots}
        milestones = []
        for entry in self.schema:
            kind = entry[0]
            if kind == "ON":
                milestones.append(On(ids[entry[1]], ids[entry[2]]))
            elif kind == "INSIDE":
                milestones.append(Inside(ids[entry[1]], ids[entry[2]]))
            elif kind == "HOLDING":
                milestones.append(Holding(ids[entry[1]]))
            elif kind == "JOINT_AT":
                _, slot, index, where, tol_frac = entry
                eid = ids[slot]
                if eid in scene and index < len(scene.get(eid).joints):
                    j = scene.get(eid).joints[index]
                    target = j.hi if where == "open" else j.lo
                    tol = tol_frac * (j.hi - j.lo)
                else:
                    target, tol = 1.0, tol_frac
                milestones.append(JointAt(eid, index, target, tol))
            elif kind == "AT_REGION":
                milestones.append(AtRegion(ids[entry[1]], Rect(*entry[2])))
            else:
                raise ValueError(f"unknown milestone schema {entry!r}")
        return Instruction(self.pattern.format(**names), tuple(milestones), self.pattern,
                           tuple(slots), self.schema, self.verb)

    def to_dict(self):
        return {
            "text": self.text,
            "milestones": [goal_to_dict(g) for g in self.milestones],
            "pattern": self.pattern,
            "slots": [list(s) for s in self.slots],
            "schema": [list(s) for s in self.schema],
            "verb": self.verb,
        }

    @classmethod
    def from_dict(cls, d):
        def tup(x):
            return tuple(tup(v) for v in x) if isinstance(x, list) else x
        return cls(d["text"], tuple(goal_from_dict(g) for g in d["milestones"]), d.get("pattern", ""),
                   tuple(tuple(s) for s in d.get("slots", ())), tuple(tup(s) for s in d.get("schema", ())),
                   d.get("verb", ""))


# --------------------------------------------------------------------------
# Policy specification


class PrimitiveKind(str, enum.Enum):
    NAVIGATE = "NAVIGATE"
    GRASP = "GRASP"
    PLACE = "PLACE"
    INSERT = "INSERT"
    ARTICULATE = "ARTICULATE"


REQUIRED_PARAMS = {
    PrimitiveKind.NAVIGATE: ("approach_angle", "standoff"),
    PrimitiveKind.GRASP: ("approach_angle",),
    PrimitiveKind.PLACE: (),
    PrimitiveKind.INSERT: (),
    PrimitiveKind.ARTICULATE: ("stroke",),
}


@dataclass(frozen=True)
class ParamBound:
    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"param {self.name}: lo > hi")


@dataclass(frozen=True)
class PrimitiveSpec:
    kind: PrimitiveKind
    targets: tuple
    params: tuple = ()
    # ARTICULATE only: which joint of the target to drive
    joint_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PrimitiveKind(self.kind))
        names = tuple(p.name for p in self.params)
        if names != REQUIRED_PARAMS[self.kind]:
            raise ValueError(f"{self.kind.value} needs params {REQUIRED_PARAMS[self.kind]}, got {names}")

    def to_dict(self):
        return {"kind": self.kind.value, "targets": list(self.targets),
                "params": [[p.name, sig9(p.lo), sig9(p.hi)] for p in self.params],
                "joint_index": self.joint_index}

    @classmethod
    def from_dict(cls, d):
        return cls(PrimitiveKind(d["kind"]), tuple(d["targets"]),
                   tuple(ParamBound(*p) for p in d["params"]), d.get("joint_index", 0))


DEFAULT_WEIGHTS = (("clearance", 1.0), ("distance", 1.0), ("progress", 1.0))


@dataclass(frozen=True)
class PolicySpec:
    """The constrained policy manifold: primitives, their parameter box and
    the solver settings the dynamic repairs tune."""

    primitives: tuple
    horizon: int = 400
    search_budget: int = 4
    shaping_weights: tuple = DEFAULT_WEIGHTS
    inflation_r: float = 0.10
    torque_scale: float = 1.0
    skipped: frozenset = frozenset()

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.search_budget < 1:
            raise ValueError("search_budget must be >= 1")
        if any(w < 0 for _, w in self.shaping_weights):
            raise ValueError("shaping weights must be non-negative")
        if self.inflation_r < 0:
            raise ValueError("inflation_r must be non-negative")
        object.__setattr__(self, "shaping_weights", tuple(sorted(self.shaping_weights)))
        object.__setattr__(self, "skipped", frozenset(self.skipped))

    @property
    def weights(self):
        return dict(self.shaping_weights)

    @property
    def bounds(self):
        """(lo, hi) arrays over the flat parameter vector, declaration order."""
        lo = [p.lo for prim in self.primitives for p in prim.params]
        hi = [p.hi for prim in self.primitives for p in prim.params]
        return np.array(lo, dtype=float), np.array(hi, dtype=float)

    @property
    def dim(self):
        return sum(len(p.params) for p in self.primitives)

    def nominal(self):
        lo, hi = self.bounds
        return (lo + hi) / 2.0

    def split(self, theta):
        """Per-primitive dicts of parameter values."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({self.dim},)")
        out, k = [], 0
        for prim in self.primitives:
            d = {}
            for p in prim.params:
                d[p.name] = float(theta[k])
                k += 1
            out.append(d)
        return out

    def in_box(self, theta, tol=1e-12):
        lo, hi = self.bounds
        theta = np.asarray(theta, dtype=float)
        return theta.shape == lo.shape and bool(np.all(theta >= lo - tol) and np.all(theta <= hi + tol))

    def to_dict(self):
        return {
            "primitives": [p.to_dict() for p in self.primitives],
            "horizon": self.horizon,
            "search_budget": self.search_budget,
            "shaping_weights": {k: sig9(v) for k, v in self.shaping_weights},
            "inflation_r": sig9(self.inflation_r),
            "torque_scale": sig9(self.torque_scale),
            "skipped": sorted(self.skipped),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(PrimitiveSpec.from_dict(p) for p in d["primitives"]),
            d["horizon"], d["search_budget"], tuple(d["shaping_weights"].items()),
            d["inflation_r"], d["torque_scale"], frozenset(d.get("skipped", ())),
        )


@dataclass(frozen=True)
class Task:
    instruction: Instruction
    scene: SceneGraph
    policy: PolicySpec
    seed: int = 0
    template: str = ""

    def referenced_ids(self):
        ids = list(self.instruction.referenced_ids())
        for p in self.policy.primitives:
            for t in p.targets:
                if t not in ids:
                    ids.append(t)
        return tuple(ids)

    def dangling(self):
        return tuple(i for i in self.referenced_ids() if i not in self.scene)

    def to_dict(self):
        return {"instruction": self.instruction.to_dict(), "scene": self.scene.to_dict(),
                "policy": self.policy.to_dict(), "seed": int(self.seed), "template": self.template}

    @classmethod
    def from_dict(cls, d):
        return cls(Instruction.from_dict(d["instruction"]), SceneGraph.from_dict(d["scene"]),
                   PolicySpec.from_dict(d["policy"]), int(d["seed"]), d.get("template", ""))


# --------------------------------------------------------------------------
# Dynamic (policy-targeting) repair operations


@dataclass(frozen=True)
class ReplanPath:
    inflation_r: float
    kind = "REPLAN_PATH"


@dataclass(frozen=True)
class AdjustGrasp:
    """Shift the approach-angle box of GRASP primitive `index` by `offset` rad."""
    index: int
    offset: float
    kind = "ADJUST_GRASP"


@dataclass(frozen=True)
class TuneImpedance:
    torque_scale: float
    kind = "TUNE_IMPEDANCE"


@dataclass(frozen=True)
class SetHorizon:
    steps: int
    kind = "SET_HORIZON"


@dataclass(frozen=True)
class SetSearchWeights:
    weights: tuple
    kind = "SET_SEARCH_WEIGHTS"


@dataclass(frozen=True)
class SkipSubstep:
    index: int
    kind = "SKIP_SUBSTEP"


STATIC_OPS = (SwapAsset, SpawnAsset, RemoveAsset, SetJoint, TransformPose, Rescale)
DYNAMIC_OPS = (ReplanPath, AdjustGrasp, TuneImpedance, SetHorizon, SetSearchWeights, SkipSubstep, ResetRobot)
RepairOp = Union[SwapAsset, SpawnAsset, RemoveAsset, SetJoint, TransformPose, Rescale,
                 ReplanPath, AdjustGrasp, TuneImpedance, SetHorizon, SetSearchWeights, SkipSubstep,
                 ResetRobot]

OP_COST = {
    "SWAP_ASSET": 3,
    "SPAWN_ASSET": 2,
    "REMOVE_ASSET": 2,
    "RESCALE": 1,
    "TRANSFORM_POSE": 1,
    "SET_JOINT": 1,
    "REPLAN_PATH": 0,
    "ADJUST_GRASP": 0,
    "TUNE_IMPEDANCE": 0,
    "SET_HORIZON": 0,
    "SET_SEARCH_WEIGHTS": 0,
    "SKIP_SUBSTEP": 0,
    "RESET_ROBOT": 0,
}


def op_cost(op) -> int:
    return OP_COST[op.kind]


def op_subject(op) -> str:
    """Entity id an op acts on, '' for solver-level ops (used for tie-breaking)."""
    for attr in ("target", "entity_id"):
        if hasattr(op, attr):
            return getattr(op, attr)
    return ""


def apply_op(task: Task, op) -> Task:
    """The residual-injection operator: task (+) op."""
    if isinstance(op, (SwapAsset, SpawnAsset, RemoveAsset, SetJoint, TransformPose, Rescale, ResetRobot)):
        scene = mutate(task.scene, op)
        instr = task.instruction.refresh(scene) if isinstance(op, (SwapAsset, SpawnAsset)) else task.instruction
        return replace(task, scene=scene, instruction=instr)
    pol = task.policy
    if isinstance(op, ReplanPath):
        pol = replace(pol, inflation_r=op.inflation_r)
    elif isinstance(op, TuneImpedance):
        pol = replace(pol, torque_scale=op.torque_scale)
    elif isinstance(op, SetHorizon):
        pol = replace(pol, horizon=op.steps)
    elif isinstance(op, SetSearchWeights):
        pol = replace(pol, shaping_weights=op.weights)
    elif isinstance(op, SkipSubstep):
        if not 0 <= op.index < len(pol.primitives):
            raise IndexError(op.index)
        pol = replace(pol, skipped=pol.skipped | {op.index})
    elif isinstance(op, AdjustGrasp):
        prim = pol.primitives[op.index]
        if prim.kind != PrimitiveKind.GRASP:
            raise ValueError("ADJUST_GRASP must target a GRASP primitive")
        params = tuple(ParamBound(p.name, p.lo + op.offset, p.hi + op.offset) for p in prim.params)
        prims = list(pol.primitives)
        prims[op.index] = replace(prim, params=params)
        pol = replace(pol, primitives=tuple(prims))
    else:
        raise TypeError(f"not a repair op: {op!r}")
    return replace(task, policy=pol)


def op_to_dict(op):
    k = op.kind
    if k == "SWAP_ASSET":
        return {"kind": k, "target": op.target, "query": list(op.query), "template": op.template.to_dict()}
    if k == "SPAWN_ASSET":
        return {"kind": k, "entity_id": op.entity_id, "query": op.query, "template": op.template.to_dict(),
                "pose": op.pose.to_dict(), "parent": op.parent}
    if k == "REMOVE_ASSET":
        return {"kind": k, "target": op.target}
    if k == "SET_JOINT":
        return {"kind": k, "target": op.target, "index": op.index, "value": sig9(op.value)}
    if k == "TRANSFORM_POSE":
        return {"kind": k, "target": op.target, "dx": sig9(op.dx), "dy": sig9(op.dy),
                "dtheta": sig9(op.dtheta), "parent": op.parent, "reparent": op.reparent}
    if k == "RESCALE":
        return {"kind": k, "target": op.target, "factor": sig9(op.factor)}
    if k == "RESET_ROBOT":
        return {"kind": k, "pose": op.pose.to_dict()}
    if k == "REPLAN_PATH":
        return {"kind": k, "inflation_r": sig9(op.inflation_r)}
    if k == "ADJUST_GRASP":
        return {"kind": k, "index": op.index, "offset": sig9(op.offset)}
    if k == "TUNE_IMPEDANCE":
        return {"kind": k, "torque_scale": sig9(op.torque_scale)}
    if k == "SET_HORIZON":
        return {"kind": k, "steps": op.steps}
    if k == "SET_SEARCH_WEIGHTS":
        return {"kind": k, "weights": {n: sig9(v) for n, v in op.weights}}
    if k == "SKIP_SUBSTEP":
        return {"kind": k, "index": op.index}
    raise TypeError(op)


def op_from_dict(d):
    k = d["kind"]
    if k == "SWAP_ASSET":
        return SwapAsset(d["target"], tuple(d["query"]), AssetTemplate.from_dict(d["template"]))
    if k == "SPAWN_ASSET":
        return SpawnAsset(d["entity_id"], d["query"], AssetTemplate.from_dict(d["template"]),
                          Pose2.from_dict(d["pose"]), d.get("parent"))
    if k == "REMOVE_ASSET":
        return RemoveAsset(d["target"])
    if k == "SET_JOINT":
        return SetJoint(d["target"], d["index"], d["value"])
    if k == "TRANSFORM_POSE":
        return TransformPose(d["target"], d["dx"], d["dy"], d.get("dtheta", 0.0), d.get("parent"),
                             d.get("reparent", False))
    if k == "RESCALE":
        return Rescale(d["target"], d["factor"])
    if k == "RESET_ROBOT":
        return ResetRobot(Pose2.from_dict(d["pose"]))
    if k == "REPLAN_PATH":
        return ReplanPath(d["inflation_r"])
    if k == "ADJUST_GRASP":
        return AdjustGrasp(d["index"], d["offset"])
    if k == "TUNE_IMPEDANCE":
        return TuneImpedance(d["torque_scale"])
    if k == "SET_HORIZON":
        return SetHorizon(d["steps"])
    if k == "SET_SEARCH_WEIGHTS":
        return SetSearchWeights(tuple(sorted(d["weights"].items())))
    if k == "SKIP_SUBSTEP":
        return SkipSubstep(d["index"])
    raise ValueError(f"unknown op kind {k!r}")


# --------------------------------------------------------------------------
# Ledger


@dataclass(frozen=True)
class RepairLedger:
    ops: tuple = ()
    budget: float = 4.0

    @property
    def semantic_cost(self) -> int:
        return sum(op_cost(op) for op in self.ops)

    def append(self, op) -> "RepairLedger":
        return replace(self, ops=self.ops + (op,))

    def extend(self, other: "RepairLedger") -> "RepairLedger":
        return replace(self, ops=self.ops + other.ops)

    def would_exceed(self, op) -> bool:
        return self.semantic_cost + op_cost(op) > self.budget + 1e-12

    def to_dict(self):
        return {"ops": [op_to_dict(o) for o in self.ops], "semantic_cost": self.semantic_cost,
                "budget": sig9(self.budget)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(op_from_dict(o) for o in d["ops"]), d["budget"])


def replay(task: Task, ledger: RepairLedger) -> Task:
    for op in ledger.ops:
        task = apply_op(task, op)
    return task


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def task_file_dict(task: Task, ledger: Optional[RepairLedger] = None):
    d = task.to_dict()
    d["ledger"] = (ledger or RepairLedger()).to_dict()
    return d


def load_task_file(d):
    task = Task.from_dict(d)
    ledger = RepairLedger.from_dict(d["ledger"]) if d.get("ledger") else RepairLedger()
    return task, ledger


def canonical(task: Task) -> str:
    return dumps(task.to_dict())


def semantic_distance(original: Task, repaired: Task, ledger: RepairLedger) -> int:
    """D(original, repaired): weighted op count, checked by replaying the ledger."""
    if canonical(replay(original, ledger)) != canonical(repaired):
        raise LedgerMismatch("replaying the ledger does not reproduce the repaired task")
    return ledger.semantic_cost


# --------------------------------------------------------------------------
# Goal evaluation


def milestone_times(trace, instruction: Instruction):
    """First step at which each milestone holds (None if never)."""
    scene0 = trace.snapshots[0][1]
    for g in instruction.milestones:
        for i in g.ids():
            if i not in scene0:
                raise DanglingReference(f"goal references missing entity {i!r}")
    out = []
    for g in instruction.milestones:
        t = None
        for step, scene, held in trace.snapshots:
            if g.holds(scene, held):
                t = step
                break
        out.append(t)
    return out


def eval_goal(trace, instruction: Instruction) -> bool:
    """Every milestone satisfied at some step, first-satisfaction times non-decreasing."""
    times = milestone_times(trace, instruction)
    if any(t is None for t in times):
        return False
    return all(a <= b for a, b in zip(times, times[1:]))
