"""Repair synthesis: a fixed rule table from diagnostics (static) or divergence
reports (dynamic) to cost-ordered candidate ops, and the static alignment loop."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audit import StaticAuditReport, check_static, requirements, static_validity_score
from .catalog import AssetCatalog, default_catalog
from .errors import BudgetExceeded, MaxIterExceeded, NoCandidate, TaskforgeError
from .executor import C_MIN, DivergenceReport, execute, nominal_theta, occluded
from .grid import occupancy, robot_cell
from .scene import (
    RESCALE_BOUNDS,
    Affordance,
    Entity,
    Pose2,
    RemoveAsset,
    Rescale,
    ResetRobot,
    SetJoint,
    SpawnAsset,
    SwapAsset,
    TransformPose,
    entity_overlap,
    query_containment,
)
from .task import (
    Inside,
    PrimitiveKind,
    ReplanPath,
    RepairLedger,
    SetHorizon,
    SetSearchWeights,
    SkipSubstep,
    Task,
    TuneImpedance,
    apply_op,
    op_cost,
    op_subject,
)

MAX_STATIC_ITER = 8
MAX_DYNAMIC_ROUNDS = 5
TORQUE_CAP = 2.0  # hardware cap on torque_scale
TORQUE_STEP = 1.5
ITEM_SHRINK = 0.8
CONTAIN_MARGIN = 0.05  # relative margin a rescaled cavity leaves around the item
SPOT_STEP = 0.025
SPOT_GAP = 0.05
MAX_SPOTS = 400
MIN_CLEAR_ANGLES = 5  # of 9 sampled grasp angles


def _ceil2(x):
    return math.ceil(round(x * 100, 9)) / 100


def _floor2(x):
    return math.floor(round(x * 100, 9)) / 100


# --------------------------------------------------------------------------
# Spot search shared by SPAWN and TRANSFORM candidates


def _nav_centers(task, eid):
    """Approach-angle box centers of every NAVIGATE aimed at eid."""
    out = []
    for p in task.policy.primitives:
        if p.kind == PrimitiveKind.NAVIGATE and p.targets[0] == eid:
            b = {x.name: x for x in p.params}.get("approach_angle")
            if b is not None:
                out.append(0.5 * (b.lo + b.hi))
    return out


def _grasp_boxes(task, eid):
    return [{x.name: x for x in p.params}["approach_angle"] for p in task.policy.primitives
            if p.kind == PrimitiveKind.GRASP and p.targets[0] == eid]


def _approach_ok(task, eid):
    from .generator import _approach_ok as ok

    scene = task.scene
    return all(ok(scene, eid, a0) for a0 in _nav_centers(task, eid))


def _grasp_clear(task, eid):
    for b in _grasp_boxes(task, eid):
        clear = sum(not occluded(task.scene, eid, a) for a in np.linspace(b.lo, b.hi, 9))
        if clear < MIN_CLEAR_ANGLES:
            return False
    return True


def _region(scene, ent, parent):
    """Admissible centre box for ent: inside the parent's footprint, or the world."""
    hw, hh = ent.half_extents()
    if parent is not None:
        s = scene.get(parent)
        sw, sh = s.half_extents()
        return s.pose.x - sw + hw, s.pose.x + sw - hw, s.pose.y - sh + hh, s.pose.y + sh - hh
    b = scene.world_bounds
    return b.xmin + hw + 0.02, b.xmax - hw - 0.02, b.ymin + hh + 0.02, b.ymax - hh - 0.02


def _spots(region, ref):
    x0, x1, y0, y1 = region
    if x1 < x0 or y1 < y0:
        return []
    xs = np.arange(x0, x1 + 1e-9, SPOT_STEP) if x1 - x0 > SPOT_STEP else np.array([0.5 * (x0 + x1)])
    ys = np.arange(y0, y1 + 1e-9, SPOT_STEP) if y1 - y0 > SPOT_STEP else np.array([0.5 * (y0 + y1)])
    pts = [(math.hypot(x - ref[0], y - ref[1]), round(float(x), 9), round(float(y), 9)) for x in xs for y in ys]
    pts.sort()
    return [(x, y) for _, x, y in pts]


def _free_of_others(scene, ent, gap):
    for o in scene.entities:
        if o.id == ent.id or o.id == ent.parent or o.parent == ent.id:
            continue
        if entity_overlap(ent, o) > -gap:
            return False
    return True


def _robot_clear(scene):
    occ = occupancy(scene, scene.robot.base_radius)
    cell = robot_cell(occ, scene)
    return cell is not None and bool(occ.free[cell])


def _reach_filter(task, margin=0.02):
    """Cheap necessary condition: some free cell connected to the robot (at the
    planning dilation) lies within reach of the spot."""
    scene = task.scene
    occ = occupancy(scene, scene.robot.base_radius + task.policy.inflation_r)
    start = robot_cell(occ, scene)
    if start is None or not occ.free[start]:
        return lambda x, y: True
    conn = np.isfinite(occ.distances(start)[occ.free_idx])
    fx, fy = occ.free_x[conn], occ.free_y[conn]
    r = scene.robot.reach - margin
    return lambda x, y: bool(np.any(np.hypot(fx - x, fy - y) <= r))


def _find_spot(task, ent, parent, ref, make_op, baseline):
    """First candidate pose (nearest to ref) whose op leaves no new diagnostics,
    keeps every approach feasible and the grasp rays mostly clear."""
    scene = task.scene
    near = _reach_filter(task)
    n = 0
    for x, y in _spots(_region(scene, ent, parent), ref):
        if not near(x, y):
            continue
        n += 1
        if n > MAX_SPOTS:
            break
        probe = Entity(ent.id, ent.asset, ent.shape, Pose2(x, y, ent.pose.theta), ent.mass, ent.affordances,
                       ent.inner_shape, ent.scale, ent.joints, parent)
        if not _free_of_others(scene, probe, SPOT_GAP):
            continue
        op = make_op(x, y)
        try:
            new = apply_op(task, op)
        except TaskforgeError:
            continue
        if not _robot_clear(new.scene):
            continue
        rep = check_static(new)
        if not set(rep.codes) <= baseline:
            continue
        if any(d.code in ("D-G1", "D-G2") and ent.id in d.subjects for d in rep.diagnostics):
            continue
        if not all(_approach_ok(new, i) for i in _touched(new)):
            continue
        if not all(_grasp_clear(new, i) for i in _touched(new)):
            continue
        return op
    return None


def _touched(task):
    return [i for i in task.referenced_ids() if i in task.scene]


# --------------------------------------------------------------------------
# Static rule table


def _size_key(template, ent):
    w, h = template.shape.half_extents()
    ew, eh = ent.shape.half_extents()
    return abs(w - ew) + abs(h - eh)


def _inside_goals(task, eid):
    return [g for g in task.instruction.milestones if isinstance(g, Inside) and eid in (g.item, g.container)]


def _rule_s1(task, diag, catalog, c_min):
    eid = diag.subjects[0]
    ent = task.scene.get(eid)
    reqs = requirements(task).get(eid, [])
    missing = sorted({a.value for s in reqs if not (s & ent.affordances) for a in s})
    base = set(check_static(task).codes) - {"D-S1"}
    ranked = []
    for t in catalog.entries:
        if t.name == ent.asset or not all(s & t.affordances for s in reqs):
            continue
        op = SwapAsset(eid, tuple(missing), t)
        try:
            new = apply_op(task, op)
        except TaskforgeError:
            continue
        clean = set(check_static(new).codes) <= base
        fits = True
        for g in _inside_goals(new, eid):
            c, it = new.scene.get(g.container), new.scene.get(g.item)
            fits = fits and c.inner_shape is not None and query_containment(c, it, c_min)
        runs = clean and execute(new, nominal_theta(new), seed=new.seed).success
        ranked.append((not clean, not runs, not fits, _size_key(t, ent), t.name, op))
    ranked.sort(key=lambda r: r[:5])
    return [r[-1] for r in ranked]


def _host_support(task, catalog):
    sup = [e for e in task.scene.entities if e.has(Affordance.SUPPORT) and e.parent is None]
    sup.sort(key=lambda e: (e.id != "counter", e.id))
    return sup[0] if sup else None


def _rule_s2(task, diag, catalog, c_min):
    ops = []
    base = set(check_static(task).codes)
    for eid in diag.missing:
        asset = dict((i, a) for _, i, a in task.instruction.slots).get(eid)
        if asset is None or asset not in catalog:
            reqs = requirements(task).get(eid, [])
            pool = [t for t in catalog.entries if reqs and all(s & t.affordances for s in reqs)]
            if not pool:
                continue
            t = pool[0]
        else:
            t = catalog.get(asset)
        parent = None
        if Affordance.GRASPABLE in t.affordances:
            host = _host_support(task, catalog)
            parent = None if host is None else host.id
        probe = Entity.from_template(eid, t, Pose2(0.0, 0.0), parent=parent)
        if parent is not None:
            s = task.scene.get(parent)
            _, sh = s.half_extents()
            ref = (s.pose.x, s.pose.y - sh)
        else:
            b = task.scene.world_bounds
            ref = (0.5 * (b.xmin + b.xmax), 0.5 * (b.ymin + b.ymax))
        op = _find_spot(task, probe, parent, ref,
                        lambda x, y: SpawnAsset(eid, t.name, t, Pose2(x, y, 0.0), parent), base)
        if op is not None:
            ops.append(op)
    return ops


def _rule_s3(task, diag, catalog, c_min):
    eid = diag.subjects[0]
    ent = task.scene.get(eid)
    idx = [p.joint_index for p in task.policy.primitives
           if p.kind == PrimitiveKind.ARTICULATE and p.targets[0] == eid]
    return [SetJoint(eid, i, ent.joints[i].lo) for i in sorted(set(idx))]


def _rule_g1(task, diag, catalog, c_min):
    eid = diag.subjects[0]
    ent = task.scene.get(eid)
    base = set(check_static(task).codes) - {"D-G1"}

    def op(x, y):
        return TransformPose(eid, x - ent.pose.x, y - ent.pose.y)

    found = _find_spot(task, ent, ent.parent, (ent.pose.x, ent.pose.y), op, base)
    return [found] if found is not None else []


def _rule_g2(task, diag, catalog, c_min):
    refs = set(task.referenced_ids())
    a, b = diag.subjects
    order = sorted((a, b), key=lambda i: (i in refs, i), reverse=False)
    mover = order[0]
    ent = task.scene.get(mover)
    base = set(check_static(task).codes) - {"D-G2"}

    def op(x, y):
        return TransformPose(mover, x - ent.pose.x, y - ent.pose.y)

    ops = []
    found = _find_spot(task, ent, ent.parent, (ent.pose.x, ent.pose.y), op, base)
    if found is not None:
        ops.append(found)
    if mover not in refs and not task.scene.children(mover):
        ops.append(RemoveAsset(mover))
    return ops


def rescale_to_fit(container: Entity, item: Entity, c_min: float = C_MIN):
    """Smallest 2-decimal factor on the container so the item fits its cavity
    with a relative margin, and at least c_min, on every side."""
    iw, ih = container.inner_half_extents()
    a, b = item.half_extents()
    need = lambda x: max(x * (1 + CONTAIN_MARGIN), x + c_min)
    f = min(max(need(a) / iw, need(b) / ih), max(need(b) / iw, need(a) / ih))
    return _ceil2(f)


def shrink_to_fit(container: Entity, item: Entity, c_min: float = C_MIN):
    """Largest 2-decimal factor on the item giving the same margin as rescale_to_fit."""
    iw, ih = container.inner_half_extents()
    a, b = item.half_extents()
    room = lambda inner, x: min(inner / ((1 + CONTAIN_MARGIN) * x), (inner - c_min) / x)
    g = max(min(room(iw, a), room(ih, b)), min(room(iw, b), room(ih, a)))
    return _floor2(g)


def _nominal_ok(task, op):
    try:
        new = apply_op(task, op)
    except TaskforgeError:
        return False
    return check_static(new).valid and execute(new, nominal_theta(new), seed=new.seed).success


def _rule_g3(task, diag, catalog, c_min):
    """Grow the container; if the grown container breaks the nominal rollout
    (typically its centroid moves out of reach), shrink the item instead."""
    cid, iid = diag.subjects
    c, it = task.scene.get(cid), task.scene.get(iid)
    lo, hi = RESCALE_BOUNDS
    f = rescale_to_fit(c, it, c_min)
    g = shrink_to_fit(c, it, c_min)
    grow = Rescale(cid, f) if lo <= f <= hi else None
    shrink = Rescale(iid, g) if lo <= g < 1 and lo <= it.scale * g else None
    only_static = len(check_static(task).diagnostics) > 1
    if grow is not None and (only_static or shrink is None or _nominal_ok(task, grow)):
        return [grow]
    return [shrink] if shrink is not None else []


_STATIC_RULES = {
    "D-S1": _rule_s1, "D-S2": _rule_s2, "D-S3": _rule_s3,
    "D-G1": _rule_g1, "D-G2": _rule_g2, "D-G3": _rule_g3,
}


def synthesize_static_repair(task: Task, report: StaticAuditReport, catalog: AssetCatalog = None,
                             c_min: float = C_MIN):
    """Candidate ops for every diagnostic, sorted by (cost, diagnostic order, entity id)."""
    if report.valid:
        raise ValueError("report has no diagnostics; nothing to repair")
    catalog = catalog or default_catalog()
    keyed = []
    seq = 0
    for di, d in enumerate(report.diagnostics):
        rule = _STATIC_RULES.get(d.code)
        if rule is None:
            raise NoCandidate(f"no repair rule for {d.code}")
        ops = rule(task, d, catalog, c_min)
        if not ops:
            raise NoCandidate(f"{d.code}: rule table produced no admissible candidate ({d.detail})")
        for op in ops:
            keyed.append((op_cost(op), di, op_subject(op), seq, op))
            seq += 1
    keyed.sort(key=lambda k: k[:4])
    return [k[-1] for k in keyed]


@dataclass(frozen=True)
class StaticResult:
    task: Task
    ledger: RepairLedger
    iterations: int
    reports: tuple  # audit report before each iteration, plus the final one

    @property
    def report(self):
        return self.reports[-1]


def run_static_loop(task: Task, budget: float = 4.0, max_iter: int = MAX_STATIC_ITER,
                    ledger: RepairLedger = None, catalog: AssetCatalog = None, c_min: float = C_MIN):
    """Audit, synthesize, apply until valid. Raises BudgetExceeded or MaxIterExceeded
    (never returns a partially repaired task)."""
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    catalog = catalog or default_catalog()
    ledger = ledger if ledger is not None else RepairLedger(budget=budget)
    report = check_static(task)
    reports = [report]
    it = 0
    while not report.valid:
        if it >= max_iter:
            raise MaxIterExceeded(f"still invalid after {max_iter} iterations", report, ledger)
        try:
            cands = synthesize_static_repair(task, report, catalog, c_min)
        except NoCandidate as exc:
            raise MaxIterExceeded(str(exc), report, ledger) from exc
        score = static_validity_score(report)
        chosen = None
        for op in cands:
            try:
                new = apply_op(task, op)
            except TaskforgeError:
                continue
            new_report = check_static(new)
            if static_validity_score(new_report) < score:
                continue
            chosen = (op, new, new_report)
            break
        if chosen is None:
            raise MaxIterExceeded("every candidate lowers the validity score", report, ledger)
        op, new, new_report = chosen
        if ledger.would_exceed(op):
            raise BudgetExceeded(f"{op.kind} (cost {op_cost(op)}) would take the ledger past "
                                 f"{ledger.budget:g}", report, ledger)
        ledger = ledger.append(op)
        task, report = new, new_report
        reports.append(report)
        it += 1
    return StaticResult(task, ledger, it, tuple(reports))


# --------------------------------------------------------------------------
# Dynamic rule table


def _reset_pose(task):
    scene = task.scene
    occ = occupancy(scene, scene.robot.base_radius + task.policy.inflation_r)
    cell = robot_cell(occ, scene)
    if cell is not None and occ.free[cell]:
        return None
    b = scene.robot.base_pose
    g = occ.nearest_free(b.x, b.y)
    if g is None:
        return None
    x, y = occ.spec.center(g)
    return Pose2(x, y, b.theta)


def _shrink_to_fit(container, item, c_min):
    lo, _ = RESCALE_BOUNDS
    f = 0.99
    while f >= lo - 1e-12:
        probe = Entity(item.id, item.asset, item.shape, item.pose, item.mass, item.affordances,
                       item.inner_shape, item.scale * f, item.joints, item.parent)
        if query_containment(container, probe, c_min):
            return round(f, 2)
        f = round(f - 0.01, 2)
    return None


def synthesize_dynamic_repair(task: Task, failure: DivergenceReport, c_min: float = C_MIN,
                              scene=None):
    """Candidate policy/geometry ops for a divergence; `scene` is the state the
    failing primitive started from (defaults to the task's initial scene)."""
    scene = scene or task.scene
    pol = task.policy
    k = failure.primitive
    prim = pol.primitives[k] if 0 <= k < len(pol.primitives) else None
    cls = failure.cls
    ops = []
    if cls in ("COLLISION_DEADLOCK", "PLANNER_NO_PATH"):
        if pol.inflation_r > 1e-3:
            ops.append(ReplanPath(round(pol.inflation_r * 0.5, 9)))
        pose = _reset_pose(task)
        if pose is not None:
            ops.append(ResetRobot(pose))
    elif cls == "GRASP_TORQUE":
        if prim is not None and prim.kind == PrimitiveKind.GRASP and prim.targets[0] in scene:
            e = scene.get(prim.targets[0])
            limit = task.scene.robot.torque_limit * pol.torque_scale
            if e.has(Affordance.GRASPABLE) and e.mass * e.scale > limit:
                s = round(pol.torque_scale * TORQUE_STEP, 9)
                if s <= TORQUE_CAP + 1e-12:
                    ops.append(TuneImpedance(s))
                elif e.scale * ITEM_SHRINK >= RESCALE_BOUNDS[0]:
                    ops.append(Rescale(e.id, ITEM_SHRINK))
    elif cls == "INSERTION_TOLERANCE":
        if prim is not None and prim.kind == PrimitiveKind.INSERT:
            iid, cid = prim.targets
            if iid in scene and cid in scene:
                c, it = scene.get(cid), scene.get(iid)
                if c.inner_shape is not None and not query_containment(c, it, c_min):
                    f = _shrink_to_fit(c, it, c_min)
                    if f is not None:
                        ops.append(Rescale(iid, f))
    elif cls == "HORIZON_EXHAUSTED":
        ops.append(SetHorizon(pol.horizon * 2))
        w = dict(pol.shaping_weights)
        w["progress"] = w.get("progress", 1.0) * 2
        ops.append(SetSearchWeights(tuple(sorted(w.items()))))
    elif cls == "PRECONDITION_ALREADY_MET":
        if prim is not None and k not in pol.skipped:
            ops.append(SkipSubstep(k))
    if not ops:
        raise NoCandidate(f"no dynamic repair for {cls} at primitive {k}: {failure.detail}")
    keyed = sorted(enumerate(ops), key=lambda t: (op_cost(t[1]), 0, op_subject(t[1]), t[0]))
    return [op for _, op in keyed]
