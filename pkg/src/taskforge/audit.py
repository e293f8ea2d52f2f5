"""Static (pre-execution) audit: four consistency checks, typed diagnostics and
the graded validity score."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

from .grid import query_reach
from .scene import PENETRATION_TOL, Affordance, entity_overlap, query_containment
from .task import Inside, PrimitiveKind, Task

CHECKS = ("reachability", "affordance", "physical_plausibility", "morphological")

CATEGORY = {
    "D-S1": "SEMANTIC", "D-S2": "SEMANTIC", "D-S3": "SEMANTIC",
    "D-G1": "GEOMETRIC", "D-G2": "GEOMETRIC", "D-G3": "GEOMETRIC",
    "D-D1": "DYNAMIC", "D-D2": "DYNAMIC", "D-D3": "DYNAMIC", "D-D4": "DYNAMIC",
}
DEFECT_CODES = tuple(CATEGORY)
STATIC_CODES = DEFECT_CODES[:6]
DYNAMIC_CODES = DEFECT_CODES[6:]

# fraction of a joint's span within which it counts as at a limit
JOINT_TOL_FRAC = 0.1

_CHECK_OF = {"D-G1": "reachability", "D-S1": "affordance", "D-S2": "affordance", "D-S3": "affordance",
             "D-G2": "physical_plausibility", "D-G3": "morphological"}


def category(code: str) -> str:
    return CATEGORY[code]


@dataclass(frozen=True)
class Diagnostic:
    code: str
    subjects: tuple
    detail: str
    severity: str = "REPAIRABLE"
    # ids the task references but the scene lacks (D-S2 only)
    missing: tuple = ()

    def __post_init__(self):
        if self.code not in CATEGORY:
            raise ValueError(f"unknown diagnostic code {self.code!r}")
        if self.severity not in ("FATAL", "REPAIRABLE"):
            raise ValueError(self.severity)

    @property
    def category(self):
        return CATEGORY[self.code]

    def to_dict(self):
        return {"code": self.code, "category": self.category, "subjects": list(self.subjects),
                "detail": self.detail, "severity": self.severity, "missing": list(self.missing)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["code"], tuple(d["subjects"]), d["detail"], d.get("severity", "REPAIRABLE"),
                   tuple(d.get("missing", ())))


@dataclass(frozen=True)
class StaticAuditReport:
    diagnostics: tuple
    checks_run: tuple  # ((name, passed), ...) in CHECKS order

    @property
    def valid(self) -> bool:
        return not self.diagnostics

    @property
    def codes(self):
        return tuple(d.code for d in self.diagnostics)

    def to_dict(self):
        return {"valid": self.valid, "mu_static": float(static_validity_score(self)),
                "checks_run": {k: v for k, v in self.checks_run},
                "diagnostics": [d.to_dict() for d in self.diagnostics]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Diagnostic.from_dict(x) for x in d["diagnostics"]),
                   tuple((k, d["checks_run"][k]) for k in CHECKS))


def requirements(task: Task):
    """Affordances the task needs of each entity: {id: [any-of set, ...]}.

    GRASP needs GRASPABLE, INSERT a CONTAINER (plus HEAT_SOURCE when the verb
    is heat), PLACE a SUPPORT, ARTICULATE something OPENABLE or SLIDABLE.
    """
    out = {}

    def need(eid, *alts):
        sets = out.setdefault(eid, [])
        s = frozenset(alts)
        if s not in sets:
            sets.append(s)

    for prim in task.policy.primitives:
        if prim.kind == PrimitiveKind.GRASP:
            need(prim.targets[0], Affordance.GRASPABLE)
        elif prim.kind == PrimitiveKind.INSERT:
            need(prim.targets[1], Affordance.CONTAINER)
            if task.instruction.verb == "heat":
                need(prim.targets[1], Affordance.HEAT_SOURCE)
        elif prim.kind == PrimitiveKind.PLACE:
            need(prim.targets[1], Affordance.SUPPORT)
        elif prim.kind == PrimitiveKind.ARTICULATE:
            need(prim.targets[0], Affordance.OPENABLE, Affordance.SLIDABLE)
    return out


def manipulated_ids(task: Task):
    """Entities the robot must reach while executing (arm targets)."""
    ids = []
    for prim in task.policy.primitives:
        if prim.kind in (PrimitiveKind.GRASP, PrimitiveKind.ARTICULATE):
            t = prim.targets[0]
        elif prim.kind in (PrimitiveKind.INSERT, PrimitiveKind.PLACE):
            t = prim.targets[1]
        else:
            continue
        if t not in ids:
            ids.append(t)
    return ids


def joint_at_limit(entity, index, tol_frac=JOINT_TOL_FRAC):
    j = entity.joints[index]
    return abs(j.value - j.hi) <= tol_frac * (j.hi - j.lo) + 1e-12


def interpenetrations(scene, tol=PENETRATION_TOL):
    """Pairs (a, b, depth) overlapping deeper than tol; parent/child pairs are exempt."""
    out = []
    for a, b in combinations(scene.entities, 2):
        if a.parent == b.id or b.parent == a.id:
            continue
        d = entity_overlap(a, b)
        if d > tol:
            out.append((a.id, b.id, d))
    return out


def _reachability(task):
    diags = []
    scene = task.scene
    for eid in manipulated_ids(task):
        if eid not in scene:
            continue
        ok, _ = query_reach(scene, eid)
        if not ok:
            diags.append(Diagnostic("D-G1", (eid,), f"{eid} is out of reach from every admissible base pose"))
    return diags


def _affordance(task):
    diags = []
    scene = task.scene
    for eid in task.referenced_ids():
        if eid not in scene:
            diags.append(Diagnostic("D-S2", (), f"referenced entity {eid} is missing from the scene",
                                    missing=(eid,)))
    for eid, sets in requirements(task).items():
        if eid not in scene:
            continue
        e = scene.get(eid)
        missing = [s for s in sets if not (s & e.affordances)]
        if missing:
            names = ", ".join("|".join(sorted(a.value for a in s)) for s in missing)
            diags.append(Diagnostic("D-S1", (eid,), f"{eid} ({e.asset}) lacks {names}"))
    for prim in task.policy.primitives:
        if prim.kind != PrimitiveKind.ARTICULATE:
            continue
        eid = prim.targets[0]
        if eid not in scene:
            continue
        e = scene.get(eid)
        if prim.joint_index < len(e.joints) and joint_at_limit(e, prim.joint_index):
            diags.append(Diagnostic("D-S3", (eid,), f"{eid} joint {prim.joint_index} is already open"))
    return diags


def _physical(task):
    return [Diagnostic("D-G2", (a, b), f"{a} and {b} interpenetrate by {d:.4f} m")
            for a, b, d in interpenetrations(task.scene)]


def _morphological(task):
    diags = []
    scene = task.scene
    for g in task.instruction.milestones:
        if not isinstance(g, Inside):
            continue
        if g.item not in scene or g.container not in scene:
            continue
        c, it = scene.get(g.container), scene.get(g.item)
        if c.inner_shape is None:
            continue  # reported as an affordance mismatch
        if not query_containment(c, it, 0.0):
            diags.append(Diagnostic("D-G3", (g.container, g.item), f"{g.item} does not fit inside {g.container}"))
    return diags


def check_static(task: Task) -> StaticAuditReport:
    """Run all four checks (no early exit) and collect diagnostics."""
    per_check = {
        "reachability": _reachability(task),
        "affordance": _affordance(task),
        "physical_plausibility": _physical(task),
        "morphological": _morphological(task),
    }
    diags = []
    for name in CHECKS:
        diags.extend(per_check[name])
    checks = tuple((name, not per_check[name]) for name in CHECKS)
    return StaticAuditReport(tuple(diags), checks)


def static_validity_score(report: StaticAuditReport) -> Fraction:
    """Fraction of the four checks that passed."""
    return Fraction(sum(1 for _, ok in report.checks_run if ok), len(CHECKS))
