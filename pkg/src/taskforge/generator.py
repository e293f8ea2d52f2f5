"""Task sampling from the catalog, clean-task construction and labelled
defect injection."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .audit import category, check_static, requirements
from .catalog import AssetCatalog, default_catalog
from .errors import CannotInject, EmptyCatalog, InvalidScene, NotClean, TaskforgeError
from .executor import execute, nominal_theta
from .grid import occupancy, robot_cell
from .scene import (
    Affordance,
    Box,
    Disk,
    Entity,
    Pose2,
    Rect,
    RemoveAsset,
    RobotModel,
    SceneGraph,
    SetJoint,
    SpawnAsset,
    SwapAsset,
    TransformPose,
    entity_overlap,
)
from .task import (
    Holding,
    Inside,
    Instruction,
    JointAt,
    On,
    ParamBound,
    PolicySpec,
    PrimitiveKind,
    PrimitiveSpec,
    Task,
    apply_op,
)

WORLD = Rect(0.0, 0.0, 4.0, 3.0)
ROBOT = RobotModel()
COUNTER_POSE = Pose2(2.0, 2.55, 0.0)
COUNTER_FRONT = 2.1
FLOOR_REGION = (1.6, 3.6, 0.35, 1.45)
FLOOR_TOP = 1.55
COUNTER_X = (1.55, 3.65)
COUNTER_Y = (2.17, 2.23)
FLOOR_GAP = 0.45
COUNTER_GAP = 0.45
MAX_PLACEMENT_ATTEMPTS = 100

APPROACH_HALF_WIDTH = 0.6
STANDOFF = (0.02, 0.15)
STROKE = (0.6, 1.4)
FRONT = -math.pi / 2

DYNAMIC_MASS_FACTOR = 1.4
TIGHT_CLEARANCE = 0.004
HORIZON_FRACTION = 0.45
CORRIDOR_X = 1.1
CORRIDOR_GAP = 0.44


def derive_seed(seed: int, index: int) -> int:
    """Per-item seed: a fixed mix of (seed, index), stable across platforms."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _gap(a: Entity, b: Entity) -> float:
    return -entity_overlap(a, b)


def _wall_mounted(asset) -> bool:
    hw, hh = asset.shape.half_extents()
    return hw < 0.05 and hh > 0.2


def _place(rng, template, eid, kind, placed, parent=None):
    """Rejection-sample a pose; `placed` holds entities sharing the surface."""
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        if kind == "counter":
            pose = Pose2(rng.uniform(*COUNTER_X), rng.uniform(*COUNTER_Y), 0.0)
            gap = COUNTER_GAP
        elif _wall_mounted(template):
            hw, _ = template.shape.half_extents()
            pose = Pose2(WORLD.xmax - hw - 0.02, rng.uniform(0.5, 1.5), 0.0)
            gap = FLOOR_GAP
        else:
            x0, x1, y0, y1 = FLOOR_REGION
            pose = Pose2(rng.uniform(x0, x1), rng.uniform(y0, y1), 0.0)
            gap = FLOOR_GAP
        e = Entity.from_template(eid, template, pose, parent=parent)
        hw, hh = e.half_extents()
        if not (WORLD.xmin < pose.x - hw and pose.x + hw < WORLD.xmax and pose.y - hh > WORLD.ymin):
            continue
        if kind != "counter" and pose.y + hh > FLOOR_TOP:
            continue
        if all(_gap(e, o) >= gap for o in placed):
            return e
    raise InvalidScene(f"could not place {eid} after {MAX_PLACEMENT_ATTEMPTS} attempts")


def _approach_ok(scene, target, a0, reach_margin=0.02):
    """Every approach angle in the box (and both standoff extremes) lands on a
    free cell connected to the robot and within reach of the target."""
    from .executor import nav_goal_point

    infl = 0.10
    occ = occupancy(scene, scene.robot.base_radius + infl)
    start = robot_cell(occ, scene)
    if start is None or not occ.free[start]:
        return False
    dist = occ.distances(start)
    t = scene.get(target)
    for a in np.linspace(a0 - APPROACH_HALF_WIDTH, a0 + APPROACH_HALF_WIDTH, 9):
        for s in STANDOFF:
            gx, gy = nav_goal_point(scene, target, a, s, infl)
            g = occ.nearest_free(gx, gy)
            if g is None or not np.isfinite(dist[g]):
                return False
            cx, cy = occ.spec.center(g)
            if math.hypot(cx - t.pose.x, cy - t.pose.y) > scene.robot.reach - reach_margin:
                return False
    return True


def _approach_direction(scene, target):
    t = scene.get(target)
    if t.parent == "counter":
        cands = [FRONT]
    else:
        rp = scene.robot.base_pose
        toward = math.atan2(rp.y - t.pose.y, rp.x - t.pose.x)
        cands = [toward, math.pi, FRONT, math.pi / 2, 0.0, -3 * math.pi / 4, 3 * math.pi / 4,
                 -math.pi / 4, math.pi / 4]
    for a in cands:
        if _approach_ok(scene, target, a):
            return a
    return cands[0]


def build_policy(template, scene, ids):
    prims = []
    dirs = {}
    for entry in template.primitives:
        kind = PrimitiveKind(entry[0])
        targets = tuple(ids[s] for s in entry[1:])
        if kind == PrimitiveKind.NAVIGATE:
            tid = targets[0]
            if tid not in dirs:
                dirs[tid] = _approach_direction(scene, tid)
            a0 = dirs[tid]
            params = (ParamBound("approach_angle", a0 - APPROACH_HALF_WIDTH, a0 + APPROACH_HALF_WIDTH),
                      ParamBound("standoff", *STANDOFF))
        elif kind == PrimitiveKind.GRASP:
            params = (ParamBound("approach_angle", FRONT - APPROACH_HALF_WIDTH, FRONT + APPROACH_HALF_WIDTH),)
        elif kind == PrimitiveKind.ARTICULATE:
            params = (ParamBound("stroke", *STROKE),)
        else:
            params = ()
        prims.append(PrimitiveSpec(kind, targets, params))
    return PolicySpec(tuple(prims))


def sample_task(catalog: AssetCatalog = None, seed: int = 0) -> Task:
    """Draw one task hypothesis; no feasibility guarantee."""
    catalog = catalog or default_catalog()
    if not catalog.entries or not catalog.task_templates:
        raise EmptyCatalog("catalog has no assets or no task templates")
    rng = np.random.default_rng(derive_seed(seed, 0))
    template = catalog.task_templates[int(rng.integers(len(catalog.task_templates)))]
    counter_t = catalog.get("counter") if "counter" in catalog else None

    floor, counter_items = [], []
    counter = None
    if counter_t is not None:
        counter = Entity.from_template("counter", counter_t, COUNTER_POSE)
    ids, slots = {}, []
    for slot in template.slots:
        asset = slot.assets[int(rng.integers(len(slot.assets)))]
        t = catalog.get(asset)
        if slot.place == "counter" and counter is not None:
            e = _place(rng, t, slot.name, "counter", counter_items, parent="counter")
            counter_items.append(e)
        else:
            e = _place(rng, t, slot.name, "floor", floor)
            floor.append(e)
        ids[slot.name] = slot.name
        slots.append((slot.name, slot.name, asset))

    n_distract = int(rng.integers(1, 3))
    for i in range(n_distract):
        place = "floor" if rng.random() < 0.5 else "counter"
        pool = catalog.distractor_assets(place)
        if not pool or (place == "counter" and counter is None):
            continue
        t = catalog.get(pool[int(rng.integers(len(pool)))])
        try:
            if place == "counter":
                counter_items.append(_place(rng, t, f"distractor_{i}", "counter", counter_items, parent="counter"))
            else:
                floor.append(_place(rng, t, f"distractor_{i}", "floor", floor))
        except InvalidScene:
            continue

    ents = tuple(floor + counter_items + ([counter] if counter is not None else []))
    scene = SceneGraph(WORLD, ents, ROBOT)
    pattern = template.patterns[int(rng.integers(len(template.patterns)))]
    if rng.random() < 0.5:
        pattern = "please " + pattern
    instr = Instruction.build(pattern, slots, template.milestones, template.verb, scene)
    policy = build_policy(template, scene, ids)
    return Task(instr, scene, policy, int(seed), template.name)


def is_clean(task: Task) -> bool:
    if not check_static(task).valid:
        return False
    return execute(task, nominal_theta(task), seed=task.seed).success


def sample_clean_task(catalog: AssetCatalog = None, seed: int = 0, max_attempts: int = 200) -> Task:
    """Resample until the task passes the static audit and a nominal rollout."""
    catalog = catalog or default_catalog()
    for a in range(max_attempts):
        try:
            task = sample_task(catalog, seed if a == 0 else derive_seed(seed, 1000 + a))
        except InvalidScene:
            continue
        if is_clean(task):
            return task
    raise NotClean(f"no clean task found for seed {seed} in {max_attempts} attempts")


# --------------------------------------------------------------------------
# Defect injection


def _prims(task, kind):
    return [(i, p) for i, p in enumerate(task.policy.primitives) if p.kind == kind]


def _grasp_item(task):
    g = _prims(task, PrimitiveKind.GRASP)
    return g[0][1].targets[0] if g else None


def _inside_pair(task):
    for m in task.instruction.milestones:
        if isinstance(m, Inside):
            return m.item, m.container
    return None


def _static_codes(task):
    return set(check_static(task).codes)


def _nominal(task):
    return execute(task, nominal_theta(task), seed=task.seed)


def _size(shape):
    w, h = shape.half_extents()
    return w, h


def _inject_s1(task, rng, catalog):
    reqs = requirements(task)
    for eid in sorted(reqs):
        e = task.scene.get(eid)
        ew, eh = e.half_extents()
        cands = []
        for a in catalog.entries:
            if a.name == e.asset or all(s & a.affordances for s in reqs[eid]):
                continue
            w, h = _size(a.shape)
            cands.append((abs(w - ew) + abs(h - eh), a.name, a))
        cands.sort(key=lambda c: (c[0], c[1]))
        head = cands[:3]
        order = [head[i] for i in rng.permutation(len(head))] + cands[3:]
        for _, _, a in order:
            missing = tuple(sorted(x.value for s in reqs[eid] for x in s))
            try:
                new = apply_op(task, SwapAsset(eid, missing, a))
            except Exception:
                continue
            if _static_codes(new) == {"D-S1"}:
                return new
    raise CannotInject("no affordance-lacking substitute keeps the scene otherwise clean")


def _inject_s2(task, rng, catalog):
    target = _grasp_item(task)
    if target is None:
        arts = _prims(task, PrimitiveKind.ARTICULATE)
        target = arts[0][1].targets[0] if arts else None
    if target is None:
        raise CannotInject("no removable referenced entity")
    return apply_op(task, RemoveAsset(target))


def _inject_s3(task, rng, catalog):
    arts = _prims(task, PrimitiveKind.ARTICULATE)
    if not arts:
        raise CannotInject("template has no articulation")
    _, prim = arts[0]
    e = task.scene.get(prim.targets[0])
    j = e.joints[prim.joint_index]
    return apply_op(task, SetJoint(e.id, prim.joint_index, j.hi))


def _inject_g1(task, rng, catalog):
    item = _grasp_item(task)
    if item is None or task.scene.get(item).parent != "counter":
        raise CannotInject("needs a grasp target on the counter")
    e = task.scene.get(item)
    c = task.scene.get("counter")
    _, ch = c.half_extents()
    y = c.pose.y + ch - 0.05 + float(rng.uniform(-0.01, 0.0))
    return apply_op(task, TransformPose(item, 0.0, y - e.pose.y))


def _inject_g2(task, rng, catalog):
    item = _grasp_item(task)
    if item is not None:
        host = task.scene.get(item)
        pool = catalog.distractor_assets("counter")
    else:
        arts = _prims(task, PrimitiveKind.ARTICULATE)
        if not arts:
            raise CannotInject("nothing to collide with")
        host = task.scene.get(arts[0][1].targets[0])
        pool = catalog.distractor_assets("counter")
    if not pool:
        raise CannotInject("no clutter assets")
    t = catalog.get(pool[int(rng.integers(len(pool)))])
    depth = float(rng.uniform(0.01, 0.03))
    hw, _ = host.half_extents()
    cw, _ = t.shape.half_extents()
    sides = (1.0, -1.0) if rng.random() < 0.5 else (-1.0, 1.0)
    for side in sides:
        pose = Pose2(host.pose.x + side * (hw + cw - depth), host.pose.y, 0.0)
        try:
            new = apply_op(task, SpawnAsset("clutter", "clutter", t, pose, host.parent))
        except TaskforgeError:
            continue
        if _static_codes(new) == {"D-G2"}:
            return new
    raise CannotInject("no clutter pose yields a lone interpenetration")


def _fit_scale(inner, item):
    """Smallest factor on `inner` at which `item` fits at zero clearance."""
    iw, ih = inner
    a, b = item
    return min(max(a / iw, b / ih), max(b / iw, a / ih))


def _with_inner(task, cid, inner_shape):
    c = task.scene.get(cid)
    return replace(task, scene=task.scene.replace_entity(replace(c, inner_shape=inner_shape)))


def _inject_g3(task, rng, catalog):
    pair = _inside_pair(task)
    if pair is None:
        raise CannotInject("template has no container goal")
    item, cid = pair
    c, it = task.scene.get(cid), task.scene.get(item)
    s = _fit_scale(c.inner_half_extents(), it.half_extents())
    k = float(rng.uniform(0.6, 0.85)) * s
    return _with_inner(task, cid, c.inner_shape.scaled(k))


def _inject_d1(task, rng, catalog):
    item = _grasp_item(task)
    if item is None:
        raise CannotInject("template has no grasp")
    e = task.scene.get(item)
    limit = task.scene.robot.torque_limit * task.policy.torque_scale
    heavy = replace(e, mass=DYNAMIC_MASS_FACTOR * limit / e.scale)
    return replace(task, scene=task.scene.replace_entity(heavy))


def _inject_d2(task, rng, catalog):
    pair = _inside_pair(task)
    if pair is None:
        raise CannotInject("template has no container goal")
    item, cid = pair
    c, it = task.scene.get(cid), task.scene.get(item)
    a, b = it.half_extents()
    if isinstance(c.inner_shape, Disk):
        inner = Disk((max(a, b) + TIGHT_CLEARANCE) / c.scale)
    else:
        iw, ih = c.inner_half_extents()
        big, small = max(a, b), min(a, b)
        w, h = (big, small) if iw >= ih else (small, big)
        inner = Box((w + TIGHT_CLEARANCE) / c.scale, (h + TIGHT_CLEARANCE) / c.scale)
        if abs(math.sin(c.pose.theta)) > abs(math.cos(c.pose.theta)):
            inner = Box(inner.half_h, inner.half_w)
    return _with_inner(task, cid, inner)


def corridor_walls(world=WORLD, x=CORRIDOR_X, gap=CORRIDOR_GAP, center_y=1.5, half_w=0.05, asset="partition_wall"):
    lo_top = center_y - gap / 2
    hi_bot = center_y + gap / 2
    mk = lambda eid, y0, y1: Entity(eid, asset, Box(half_w, (y1 - y0) / 2), Pose2(x, (y0 + y1) / 2), 100.0)
    # the upper wall runs to the counter front, which spans the full width
    return mk("wall_a", world.ymin, lo_top), mk("wall_b", hi_bot, COUNTER_FRONT)


def _inject_d3(task, rng, catalog):
    scene = task.scene
    for w in corridor_walls():
        if w.id in scene:
            raise CannotInject("walls already present")
        scene = scene.add_entity(w)
    return replace(task, scene=scene)


def _inject_d4(task, rng, catalog):
    tr = _nominal(task)
    h = max(1, int(math.floor(HORIZON_FRACTION * tr.steps)))
    return replace(task, policy=replace(task.policy, horizon=h))


_INJECTORS = {
    "D-S1": _inject_s1, "D-S2": _inject_s2, "D-S3": _inject_s3,
    "D-G1": _inject_g1, "D-G2": _inject_g2, "D-G3": _inject_g3,
    "D-D1": _inject_d1, "D-D2": _inject_d2, "D-D3": _inject_d3, "D-D4": _inject_d4,
}

_EXPECTED_CLASS = {
    "D-D1": "GRASP_TORQUE", "D-D2": "INSERTION_TOLERANCE",
    "D-D3": "PLANNER_NO_PATH", "D-D4": "HORIZON_EXHAUSTED",
}


def verify_defect(task: Task, code: str) -> bool:
    """Oracle check that `task` exhibits exactly the labelled defect."""
    if category(code) != "DYNAMIC":
        return _static_codes(task) == {code}
    if _static_codes(task):
        return False
    tr = _nominal(task)
    return (not tr.success) and tr.report.cls == _EXPECTED_CLASS[code]


def inject_defect(task: Task, label: str, seed: int = 0, catalog: AssetCatalog = None, check_clean=True):
    """Inject exactly one labelled defect into a clean task.

    Returns (defective_task, label).
    """
    if label not in _INJECTORS:
        raise ValueError(f"unknown defect code {label!r}")
    catalog = catalog or default_catalog()
    if check_clean and not is_clean(task):
        raise NotClean("task fails the static audit or its nominal rollout")
    rng = np.random.default_rng(derive_seed(seed, 7))
    try:
        out = _INJECTORS[label](task, rng, catalog)
    except (CannotInject, NotClean):
        raise
    except TaskforgeError as exc:
        raise CannotInject(f"{label}: {exc}") from exc
    if not verify_defect(out, label):
        raise CannotInject(f"{label} could not be verified on template {task.template}")
    return out, label


def defect_task(code: str, seed: int, catalog: AssetCatalog = None, max_attempts: int = 60):
    """A clean task with `code` injected; resamples until a template supports it."""
    catalog = catalog or default_catalog()
    for a in range(max_attempts):
        s = derive_seed(seed, 5000 + a)
        clean = sample_clean_task(catalog, s)
        try:
            return inject_defect(clean, code, s, catalog, check_clean=False)[0]
        except CannotInject:
            continue
    raise CannotInject(f"no template accepted {code} within {max_attempts} attempts")


def make_batch_task(index: int, label, seed: int, catalog: AssetCatalog = None):
    s = derive_seed(seed, index)
    if label is None:
        return sample_clean_task(catalog, s)
    return defect_task(label, s, catalog)


# --------------------------------------------------------------------------
# Small-parameter tasks (oracle targets for the Monte Carlo estimator)


def _small_world(entities, robot_pose=Pose2(0.9, 1.0, 0.0)):
    return SceneGraph(Rect(0.0, 0.0, 2.0, 2.0), tuple(entities), replace(ROBOT, base_pose=robot_pose))


def _item(eid="item", pose=Pose2(1.3, 1.0), radius=0.005, mass=0.2, parent=None):
    return Entity(eid, "pellet", Disk(radius), pose, mass, frozenset({Affordance.GRASPABLE}), parent=parent)


def _half_plane_occluder(item_x=1.3):
    # face 9.9 mm on the +x side: the vertical ray and every ray leaning to +x
    # come within the 1 cm dilation, so success needs angle > pi/2 + 0.01
    hw = 0.1
    return Entity("occluder", "partition_wall", Box(hw, 0.5), Pose2(item_x + 0.0099 + hw, 1.0), 100.0)


def half_plane_grasp_task() -> Task:
    """One parameter (approach angle over [0, pi]); success iff the ray leans
    away from the occluder, i.e. (just under) the upper half of the box."""
    scene = _small_world([_item(), _half_plane_occluder()])
    prim = PrimitiveSpec(PrimitiveKind.GRASP, ("item",), (ParamBound("approach_angle", 0.0, math.pi),))
    instr = Instruction("pick up the pellet", (Holding("item"),), verb="pick")
    return Task(instr, scene, PolicySpec((prim,), search_budget=1), 0, "half_plane_grasp")


def grasp_and_slide_task() -> Task:
    """Two parameters: approach angle (about half succeed) and slide stroke (5/8 succeed)."""
    from .scene import JointKind, JointSpec

    slider = Entity("window", "window", Box(0.03, 0.35), Pose2(0.9, 0.5), 12.0,
                    frozenset({Affordance.SLIDABLE}), joints=(JointSpec(JointKind.PRISMATIC, 0.0, 0.6, 0.0),))
    scene = _small_world([_item(), _half_plane_occluder(), slider])
    prims = (
        PrimitiveSpec(PrimitiveKind.GRASP, ("item",), (ParamBound("approach_angle", 0.0, math.pi),)),
        PrimitiveSpec(PrimitiveKind.ARTICULATE, ("window",), (ParamBound("stroke", *STROKE),)),
    )
    instr = Instruction("pick up the pellet and slide the window open",
                        (Holding("item"), JointAt("window", 0, 0.6, 0.06)), verb="slide")
    return Task(instr, scene, PolicySpec(prims, search_budget=1), 0, "grasp_and_slide")


def already_done_task() -> Task:
    """Goal holds in the initial state: every rollout succeeds."""
    table = Entity("table", "side_table", Box(0.25, 0.25), Pose2(1.3, 1.0), 10.0, frozenset({Affordance.SUPPORT}))
    scene = _small_world([table, _item(pose=Pose2(1.3, 1.0), radius=0.04, parent="table")])
    prim = PrimitiveSpec(PrimitiveKind.GRASP, ("item",), (ParamBound("approach_angle", 0.0, math.pi),))
    instr = Instruction("leave the pellet on the table", (On("item", "table"),), verb="pick")
    return Task(instr, scene, PolicySpec((prim,)), 0, "already_done")


def heavy_grasp_task() -> Task:
    """Load above the torque limit: no rollout succeeds."""
    scene = _small_world([_item(mass=50.0)])
    prim = PrimitiveSpec(PrimitiveKind.GRASP, ("item",), (ParamBound("approach_angle", 0.0, math.pi),))
    instr = Instruction("pick up the pellet", (Holding("item"),), verb="pick")
    return Task(instr, scene, PolicySpec((prim,)), 0, "heavy_grasp")


def small_tasks():
    """Bundled tasks with at most two parameters, keyed by name."""
    return {
        "half_plane_grasp": half_plane_grasp_task(),
        "grasp_and_slide": grasp_and_slide_task(),
        "already_done": already_done_task(),
        "heavy_grasp": heavy_grasp_task(),
    }
