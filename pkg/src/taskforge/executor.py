"""Deterministic kinematic rollouts of a primitive sequence, with checkpoints
at primitive boundaries and an in-step classifier for runtime divergences."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .audit import JOINT_TOL_FRAC, interpenetrations, joint_at_limit
from .grid import GRID_RES, occupancy
from .scene import (Affordance, Disk, Pose2, SceneGraph, entity_overlap, fits_inside, query_containment, sig9,
                    signed_distance)
from .task import PrimitiveKind, Task, milestone_times

DIVERGENCE_CLASSES = (
    "COLLISION_DEADLOCK", "GRASP_TORQUE", "INSERTION_TOLERANCE",
    "HORIZON_EXHAUSTED", "PRECONDITION_ALREADY_MET", "PLANNER_NO_PATH",
)

# repair stage each divergence class is attributed to
STAGE = {
    "COLLISION_DEADLOCK": "PRIMITIVE",
    "GRASP_TORQUE": "PRIMITIVE",
    "INSERTION_TOLERANCE": "PRIMITIVE",
    "PLANNER_NO_PATH": "PRIMITIVE",
    "PRECONDITION_ALREADY_MET": "PRIMITIVE",
    "HORIZON_EXHAUSTED": "SEARCH",
}

# defect code the in-step auditor reports for each class
INSTEP_CODE = {
    "GRASP_TORQUE": "D-D1",
    "INSERTION_TOLERANCE": "D-D2",
    "PLANNER_NO_PATH": "D-D3",
    "COLLISION_DEADLOCK": "D-D3",
    "HORIZON_EXHAUSTED": "D-D4",
}

C_MIN = 0.01
RAY_LENGTH = 0.3
RAY_SPACING = 0.01
OCCLUSION_DILATION = 0.01
SEARCH_PERTURBATION = 0.35
ARTIC_STEP = 0.1

_RAY_T = np.arange(1, int(round(RAY_LENGTH / RAY_SPACING)) + 1) * RAY_SPACING


@dataclass(frozen=True)
class ExecutionConfig:
    horizon: int = 400
    inflation_r: float = 0.10
    torque_limit: float = 10.0
    c_min: float = C_MIN
    shaping_weights: tuple = (("clearance", 1.0), ("distance", 1.0), ("progress", 1.0))
    search_budget: int = 4
    grid_res: float = GRID_RES
    dt: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.inflation_r < 0:
            raise ValueError("inflation_r must be >= 0")
        if not self.c_min > 0:
            raise ValueError("c_min must be > 0")
        if self.search_budget < 1:
            raise ValueError("search_budget must be >= 1")

    @classmethod
    def for_task(cls, task: Task, c_min=C_MIN, grid_res=GRID_RES):
        p = task.policy
        return cls(p.horizon, p.inflation_r, task.scene.robot.torque_limit * p.torque_scale, c_min,
                   p.shaping_weights, p.search_budget, grid_res)

    @property
    def weights(self):
        return dict(self.shaping_weights)

    def to_dict(self):
        return {"horizon": self.horizon, "inflation_r": sig9(self.inflation_r),
                "torque_limit": sig9(self.torque_limit), "c_min": sig9(self.c_min),
                "shaping_weights": {k: sig9(v) for k, v in self.shaping_weights},
                "search_budget": self.search_budget, "grid_res": sig9(self.grid_res), "dt": self.dt}


@dataclass(frozen=True)
class Checkpoint:
    """World state right before primitive `index` starts."""
    index: int
    step: int
    scene: SceneGraph
    held: Optional[str]

    @property
    def robot(self) -> Pose2:
        return self.scene.robot.base_pose


@dataclass(frozen=True)
class DivergenceReport:
    cls: str
    primitive: int
    step: int
    detail: str

    def __post_init__(self):
        if self.cls not in DIVERGENCE_CLASSES:
            raise ValueError(self.cls)

    @property
    def stage(self):
        return STAGE[self.cls]

    @property
    def instep_code(self):
        return INSTEP_CODE.get(self.cls)

    def to_dict(self):
        return {"class": self.cls, "primitive": self.primitive, "step": self.step, "detail": self.detail}


@dataclass
class ExecutionTrace:
    header: dict
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (step, scene, held)
    snapshot_prims: list = field(default_factory=list)  # primitive that produced each snapshot, -1 = start
    checkpoints: list = field(default_factory=list)
    report: Optional[DivergenceReport] = None
    steps: int = 0
    milestone_times: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.report is None

    @property
    def outcome(self) -> str:
        return "SUCCESS" if self.report is None else "DIVERGED"

    @property
    def final_scene(self) -> SceneGraph:
        return self.snapshots[-1][1]

    def to_jsonl(self) -> str:
        head = dict(self.header)
        head["record"] = "header"
        lines = [json.dumps(head, sort_keys=True)]
        for r in self.records:
            lines.append(json.dumps(dict(r, record="step"), sort_keys=True))
        lines.append(json.dumps({
            "record": "outcome", "outcome": self.outcome, "steps": self.steps,
            "milestone_times": self.milestone_times,
            "divergence": None if self.report is None else self.report.to_dict(),
        }, sort_keys=True))
        return "\n".join(lines) + "\n"


class _Diverge(Exception):
    def __init__(self, cls, detail):
        super().__init__(detail)
        self.cls = cls
        self.detail = detail


def _anchor(scene, eid):
    """Floor-level ancestor of an entity (itself if on the floor)."""
    e = scene.get(eid)
    seen = set()
    while e.parent is not None and e.parent not in seen:
        seen.add(e.id)
        e = scene.get(e.parent)
    return e


def _exit_distance(anchor, px, py, ux, uy):
    """Distance along unit u from p until leaving the anchor's footprint."""
    cx, cy = anchor.pose.x, anchor.pose.y
    if isinstance(anchor.shape, Disk):
        r = anchor.shape.radius * anchor.scale
        dx, dy = px - cx, py - cy
        b = dx * ux + dy * uy
        c = dx * dx + dy * dy - r * r
        disc = b * b - c
        return max(0.0, -b + math.sqrt(disc)) if disc > 0 else 0.0
    hw, hh = anchor.half_extents()
    ts = []
    if abs(ux) > 1e-12:
        ts.append(((cx + math.copysign(hw, ux)) - px) / ux)
    if abs(uy) > 1e-12:
        ts.append(((cy + math.copysign(hh, uy)) - py) / uy)
    return max(0.0, min(ts))


def nav_goal_point(scene, target, angle, standoff, inflation_r, w_distance=1.0):
    """Approach point for NAVIGATE: out along `angle` from the target until clear
    of its floor-level footprint, then base radius + inflation + standoff more."""
    t = scene.get(target)
    anc = _anchor(scene, target)
    ux, uy = math.cos(angle), math.sin(angle)
    d = (_exit_distance(anc, t.pose.x, t.pose.y, ux, uy) + scene.robot.base_radius + inflation_r
         + standoff / max(w_distance, 1e-6))
    return t.pose.x + d * ux, t.pose.y + d * uy


def occluded(scene, target, angle, held=None, dilation=OCCLUSION_DILATION):
    """Does the approach ray from the target centroid hit another entity?"""
    t = scene.get(target)
    px = t.pose.x + _RAY_T * math.cos(angle)
    py = t.pose.y + _RAY_T * math.sin(angle)
    for e in scene.entities:
        if e.id == target or e.id == t.parent or e.parent == target or e.id == held:
            continue
        if np.any(signed_distance(e, px, py) <= dilation):
            return True
    return False


def _rng(seed, index):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, index])


class _Run:
    def __init__(self, task, params, config, seed, trace):
        self.task = task
        self.params = params
        self.cfg = config
        self.seed = seed
        self.trace = trace
        self.w = config.weights
        self.dangling = bool(task.dangling())

    # -- helpers -------------------------------------------------------------
    def _advance(self, n, k):
        if self.step + n > self.cfg.horizon:
            self.step = self.cfg.horizon
            raise _Diverge("HORIZON_EXHAUSTED", f"horizon {self.cfg.horizon} exhausted")
        self.step += n

    def _require(self, eid, cls):
        if eid not in self.scene:
            raise _Diverge(cls, f"target {eid} missing")
        return self.scene.get(eid)

    def _within_reach(self, eid):
        e = self.scene.get(eid)
        b = self.scene.robot.base_pose
        if math.hypot(e.pose.x - b.x, e.pose.y - b.y) > self.scene.robot.reach + 1e-9:
            raise _Diverge("COLLISION_DEADLOCK", f"{eid} out of reach from base")

    def _set_robot(self, pose):
        self.scene = self.scene.with_robot(replace(self.scene.robot, base_pose=pose))
        if self.held is not None:
            e = self.scene.get(self.held)
            self.scene = self.scene.replace_entity(replace(e, pose=Pose2(pose.x, pose.y, e.pose.theta)))

    # -- primitives ----------------------------------------------------------
    def navigate(self, k, prim, p):
        tid = prim.targets[0]
        self._require(tid, "PLANNER_NO_PATH")
        scene = self.scene
        occ = occupancy(scene, scene.robot.base_radius + self.cfg.inflation_r,
                        exclude=() if self.held is None else (self.held,), res=self.cfg.grid_res)
        rp = scene.robot.base_pose
        start = occ.spec.cell_of(rp.x, rp.y)
        if start is None or not occ.free[start]:
            raise _Diverge("COLLISION_DEADLOCK", "robot base is in collision at the planning inflation")
        gx, gy = nav_goal_point(scene, tid, p["approach_angle"], p["standoff"], self.cfg.inflation_r,
                                self.w.get("distance", 1.0))
        goal = occ.nearest_free(gx, gy)
        if goal is None:
            raise _Diverge("PLANNER_NO_PATH", "no free cell for the approach pose")
        dist = occ.distances(start)[goal]
        if not np.isfinite(dist):
            raise _Diverge("PLANNER_NO_PATH", f"no path to the approach pose of {tid}")
        self._advance(int(math.ceil(dist - 1e-9)), k)
        x, y = occ.spec.center(goal)
        t = scene.get(tid)
        self._set_robot(Pose2(x, y, math.atan2(t.pose.y - y, t.pose.x - x)))
        return {"event": "navigate", "target": tid, "goal": [sig9(x), sig9(y)]}

    def grasp(self, k, prim, p):
        tid = prim.targets[0]
        e = self._require(tid, "GRASP_TORQUE")
        if Affordance.GRASPABLE not in e.affordances:
            raise _Diverge("GRASP_TORQUE", f"{tid} is not graspable")
        if self.held is not None:
            raise _Diverge("GRASP_TORQUE", "gripper already holds an item")
        self._within_reach(tid)
        if e.mass * e.scale > self.cfg.torque_limit + 1e-12:
            raise _Diverge("GRASP_TORQUE", f"load {e.mass * e.scale:.3f} exceeds torque limit {self.cfg.torque_limit:.3f}")
        rng = _rng(self.seed, k)
        amp = SEARCH_PERTURBATION * self.w.get("progress", 1.0)
        dil = OCCLUSION_DILATION * self.w.get("clearance", 1.0)
        angle = p["approach_angle"]
        for attempt in range(self.cfg.search_budget):
            a = angle if attempt == 0 else angle + float(rng.uniform(-1.0, 1.0)) * amp
            self._advance(1, k)
            if not occluded(self.scene, tid, a, self.held, dil):
                b = self.scene.robot.base_pose
                self.held = tid
                self.scene = self.scene.replace_entity(replace(e, parent=None, pose=Pose2(b.x, b.y, e.pose.theta)))
                return {"event": "grasp", "target": tid, "attempts": attempt + 1, "angle": sig9(a)}
        raise _Diverge("HORIZON_EXHAUSTED", f"search budget {self.cfg.search_budget} exhausted without a clear approach")

    def _release(self, item, dest):
        e = self.scene.get(item)
        d = self.scene.get(dest)
        self.scene = self.scene.replace_entity(replace(e, parent=dest, pose=Pose2(d.pose.x, d.pose.y, e.pose.theta)))
        self.held = None

    def insert(self, k, prim, p):
        item, cid = prim.targets
        self._require(item, "INSERTION_TOLERANCE")
        c = self._require(cid, "INSERTION_TOLERANCE")
        if self.held != item:
            raise _Diverge("INSERTION_TOLERANCE", f"{item} is not held")
        if c.inner_shape is None:
            raise _Diverge("INSERTION_TOLERANCE", f"{cid} has no cavity")
        if self.task.instruction.verb == "heat" and Affordance.HEAT_SOURCE not in c.affordances:
            raise _Diverge("INSERTION_TOLERANCE", f"{cid} cannot heat")
        self._within_reach(cid)
        if c.has(Affordance.OPENABLE) and c.joints and not joint_at_limit(c, 0):
            raise _Diverge("INSERTION_TOLERANCE", f"{cid} is closed")
        if not query_containment(c, self.scene.get(item), self.cfg.c_min):
            raise _Diverge("INSERTION_TOLERANCE", f"{item} does not clear {cid} by c_min={self.cfg.c_min}")
        self._advance(1, k)
        self._release(item, cid)
        return {"event": "insert", "item": item, "container": cid}

    def place(self, k, prim, p):
        item, sid = prim.targets
        it = self._require(item, "INSERTION_TOLERANCE")
        s = self._require(sid, "INSERTION_TOLERANCE")
        if self.held != item:
            raise _Diverge("INSERTION_TOLERANCE", f"{item} is not held")
        if Affordance.SUPPORT not in s.affordances:
            raise _Diverge("INSERTION_TOLERANCE", f"{sid} is not a support")
        self._within_reach(sid)
        if not fits_inside(s.half_extents(), it.half_extents(), 0.0):
            raise _Diverge("INSERTION_TOLERANCE", f"{item} overhangs {sid}")
        placed = replace(it, pose=Pose2(s.pose.x, s.pose.y, it.pose.theta))
        for other in self.scene.children(sid):
            if other.id != item and entity_overlap(placed, other) > 1e-3:
                raise _Diverge("INSERTION_TOLERANCE", f"no room on {sid}")
        self._advance(1, k)
        self._release(item, sid)
        return {"event": "place", "item": item, "support": sid}

    def articulate(self, k, prim, p):
        tid = prim.targets[0]
        e = self._require(tid, "COLLISION_DEADLOCK")
        ji = prim.joint_index
        if not (e.affordances & {Affordance.OPENABLE, Affordance.SLIDABLE}) or ji >= len(e.joints):
            raise _Diverge("COLLISION_DEADLOCK", f"{tid} has no drivable joint")
        if joint_at_limit(e, ji):
            raise _Diverge("PRECONDITION_ALREADY_MET", f"{tid} joint {ji} already open")
        self._within_reach(tid)
        j = e.joints[ji]
        span = j.hi - j.lo
        value = j.value
        for attempt in range(self.cfg.search_budget):
            new = min(j.hi, value + p["stroke"] * span)
            self._advance(max(1, int(math.ceil((new - value) / ARTIC_STEP - 1e-9))), k)
            value = new
            joints = list(e.joints)
            joints[ji] = replace(j, value=value)
            e = replace(e, joints=tuple(joints))
            self.scene = self.scene.replace_entity(e)
            if abs(value - j.hi) <= JOINT_TOL_FRAC * span + 1e-12:
                return {"event": "articulate", "target": tid, "value": sig9(value), "pushes": attempt + 1}
        raise _Diverge("HORIZON_EXHAUSTED", f"{tid} not open after {self.cfg.search_budget} pushes")

    # -- driver --------------------------------------------------------------
    def goal_met(self):
        if self.dangling:
            return False
        times = milestone_times(self.trace, self.task.instruction)
        if any(t is None for t in times):
            return False
        return all(a <= b for a, b in zip(times, times[1:]))

    def snapshot(self, k):
        self.trace.snapshots.append((self.step, self.scene, self.held))
        self.trace.snapshot_prims.append(k)

    def run(self, k0, scene, held, step):
        self.scene, self.held, self.step = scene, held, step
        tr = self.trace
        prims = self.task.policy.primitives
        handlers = {
            PrimitiveKind.NAVIGATE: self.navigate, PrimitiveKind.GRASP: self.grasp,
            PrimitiveKind.PLACE: self.place, PrimitiveKind.INSERT: self.insert,
            PrimitiveKind.ARTICULATE: self.articulate,
        }
        if k0 == 0:
            self.snapshot(-1)
            bad = interpenetrations(scene)
            if bad:
                a, b, d = bad[0]
                tr.checkpoints.append(Checkpoint(0, 0, scene, held))
                self._finish(DivergenceReport("COLLISION_DEADLOCK", 0, 0, f"{a} and {b} interpenetrate"))
                return
        if self.goal_met():
            self._finish(None)
            return
        for k in range(k0, len(prims)):
            tr.checkpoints.append(Checkpoint(k, self.step, self.scene, self.held))
            prim = prims[k]
            if k in self.task.policy.skipped:
                tr.records.append(self._record(k, prim, {"event": "skip"}))
                continue
            try:
                info = handlers[prim.kind](k, prim, self.params[k])
            except _Diverge as dv:
                tr.records.append(self._record(k, prim, {"event": "diverged", "class": dv.cls, "detail": dv.detail}))
                self._finish(DivergenceReport(dv.cls, k, self.step, dv.detail))
                return
            tr.records.append(self._record(k, prim, info))
            self.snapshot(k)
            if self.goal_met():
                self._finish(None)
                return
        self._finish(DivergenceReport("HORIZON_EXHAUSTED", len(prims) - 1 if prims else 0, self.step,
                                      "primitives finished without satisfying the goal"))

    def _record(self, k, prim, info):
        b = self.scene.robot.base_pose
        rec = {"step": self.step, "primitive": k, "kind": prim.kind.value,
               "robot": [sig9(b.x), sig9(b.y), sig9(b.theta)], "held": self.held}
        rec.update(info)
        return rec

    def _finish(self, report):
        tr = self.trace
        tr.report = report
        tr.steps = self.step
        if not self.dangling:
            tr.milestone_times = milestone_times(tr, self.task.instruction)


def _header(task, theta, config, seed):
    return {"template": task.template, "task_seed": int(task.seed), "seed": int(seed),
            "theta": [sig9(float(x)) for x in theta], "config": config.to_dict()}


def _check_theta(task, theta):
    theta = np.asarray(theta, dtype=float)
    if not task.policy.in_box(theta, tol=1e-9):
        raise ValueError("theta outside the policy parameter box")
    return task.policy.split(theta)


def execute(task: Task, theta, config: Optional[ExecutionConfig] = None, seed: int = 0) -> ExecutionTrace:
    """One deterministic rollout of the task's primitives under parameters theta."""
    config = config or ExecutionConfig.for_task(task)
    params = _check_theta(task, theta)
    trace = ExecutionTrace(_header(task, np.asarray(theta, float), config, seed))
    _Run(task, params, config, seed, trace).run(0, task.scene, None, 0)
    return trace


def execute_from(task: Task, theta, checkpoint: Checkpoint, prefix: Optional[ExecutionTrace] = None,
                 config: Optional[ExecutionConfig] = None, seed: int = 0) -> ExecutionTrace:
    """Resume from a checkpoint; primitives before checkpoint.index are not re-run."""
    config = config or ExecutionConfig.for_task(task)
    params = _check_theta(task, theta)
    trace = ExecutionTrace(_header(task, np.asarray(theta, float), config, seed))
    # primitive 0 re-records the start snapshot itself
    if prefix is not None and checkpoint.index > 0:
        trace.records = [r for r in prefix.records if r["primitive"] < checkpoint.index]
        keep = [i for i, k in enumerate(prefix.snapshot_prims) if k < checkpoint.index]
        trace.snapshots = [prefix.snapshots[i] for i in keep]
        trace.snapshot_prims = [prefix.snapshot_prims[i] for i in keep]
        trace.checkpoints = [c for c in prefix.checkpoints if c.index < checkpoint.index]
    if not trace.snapshots and checkpoint.index > 0:
        trace.snapshots = [(checkpoint.step, checkpoint.scene, checkpoint.held)]
        trace.snapshot_prims = [-1]
    _Run(task, params, config, seed, trace).run(checkpoint.index, checkpoint.scene, checkpoint.held, checkpoint.step)
    return trace


def nominal_theta(task: Task):
    return task.policy.nominal()


@dataclass(frozen=True)
class DynamicResult:
    task: Task
    trace: ExecutionTrace
    ledger: object
    rounds: int
    reports: tuple  # every divergence met along the way, in order


def run_dynamic_loop(task: Task, config: Optional[ExecutionConfig] = None, ledger=None,
                     max_rounds: int = 5, seed: int = 0, theta=None):
    """Roll out at nominal parameters; on divergence at primitive k, restore the
    checkpoint before k, apply the next dynamic candidate and re-run the suffix.

    Raises RepairFailure (kind NoCandidate / MaxRounds / BudgetExceeded) carrying
    the last DivergenceReport.
    """
    from .errors import BudgetExceeded, NoCandidate, RepairFailure
    from .repair import synthesize_dynamic_repair
    from .scene import ResetRobot, mutate
    from .task import RepairLedger, apply_op

    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    ledger = ledger if ledger is not None else RepairLedger()
    theta = nominal_theta(task) if theta is None else np.asarray(theta, float)
    c_min = config.c_min if config is not None else C_MIN
    base_cfg = config

    def cfg_for(t):
        if base_cfg is None:
            return ExecutionConfig.for_task(t, c_min)
        return replace(base_cfg, horizon=t.policy.horizon, inflation_r=t.policy.inflation_r,
                       torque_limit=t.scene.robot.torque_limit * t.policy.torque_scale,
                       shaping_weights=t.policy.shaping_weights, search_budget=t.policy.search_budget)

    trace = execute(task, theta, cfg_for(task), seed)
    rounds = {}
    tried = {}
    reports = []
    total = 0
    while not trace.success:
        rep = trace.report
        reports.append(rep)
        k = rep.primitive
        rounds[k] = rounds.get(k, 0) + 1
        if rounds[k] > max_rounds:
            raise RepairFailure("MaxRounds", f"primitive {k} still diverges after {max_rounds} repairs "
                                f"({rep.cls})", rep, ledger)
        cps = [c for c in trace.checkpoints if c.index == k]
        cp = cps[-1] if cps else Checkpoint(0, 0, task.scene, None)
        try:
            cands = synthesize_dynamic_repair(task, rep, c_min, scene=cp.scene)
        except NoCandidate as exc:
            raise RepairFailure("NoCandidate", str(exc), rep, ledger) from exc
        n = tried.get((rep.cls, k), 0)
        tried[(rep.cls, k)] = n + 1
        op = cands[n % len(cands)]
        if ledger.would_exceed(op):
            raise BudgetExceeded(f"{op.kind} would exceed the budget", rep, ledger)
        task = apply_op(task, op)
        ledger = ledger.append(op)
        total += 1
        if isinstance(op, ResetRobot) or cp.index == 0:
            trace = execute(task, theta, cfg_for(task), seed)
            continue
        cp_scene = cp.scene
        if op.kind in ("RESCALE", "TRANSFORM_POSE", "SET_JOINT", "SWAP_ASSET", "SPAWN_ASSET", "REMOVE_ASSET"):
            cp_scene = mutate(cp_scene, op)
        trace = execute_from(task, theta, replace(cp, scene=cp_scene), trace, cfg_for(task), seed)
    return DynamicResult(task, trace, ledger, total, tuple(reports))
