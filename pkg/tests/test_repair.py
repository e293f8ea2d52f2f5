from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from taskforge.audit import STATIC_CODES, check_static, static_validity_score
from taskforge.errors import BudgetExceeded, NoCandidate, RepairFailure
from taskforge.executor import DivergenceReport, execute, nominal_theta
from taskforge.generator import _inject_g1, defect_task, sample_clean_task
from taskforge.repair import (
    rescale_to_fit, run_static_loop, synthesize_dynamic_repair, synthesize_static_repair,
)
from taskforge.scene import Affordance, Box, Entity, Pose2, Rescale, query_containment
from taskforge.task import RepairLedger, replay, semantic_distance


def container(inner):
    return Entity("pot", "pot", Box(0.3, 0.3), Pose2(1, 1), 1.0, frozenset({Affordance.CONTAINER}), inner)


def test_rescale_factor_example(frozen):
    pot = container(Box(0.2, 0.2))
    item = Entity("item", "potato", Box(0.3, 0.3), Pose2(1, 1), 0.2, frozenset({Affordance.GRASPABLE}))
    f = rescale_to_fit(pot, item)
    assert f == frozen["rescale_example"] == 1.58
    assert query_containment(replace(pot, scale=f), item, 0.01)
    # smallest two-decimal factor leaving a 5% margin around the item
    assert 0.2 * f >= 0.3 * 1.05 > 0.2 * (f - 0.01)


def test_g3_candidate_restores_containment():
    t = defect_task("D-G3", 0)
    r = check_static(t)
    cands = synthesize_static_repair(t, r)
    assert [c.kind for c in cands] == ["RESCALE"]
    op = cands[0]
    fixed = replay(t, RepairLedger((op,)))
    assert check_static(fixed).valid


def heat_s1():
    for s in range(60):
        t = defect_task("D-S1", s)
        if t.template == "heat_food":
            return t
    raise AssertionError


def test_s1_swaps_for_heat_source():
    t = heat_s1()
    cands = synthesize_static_repair(t, check_static(t))
    assert cands and all(c.kind == "SWAP_ASSET" for c in cands)
    assert "HEAT_SOURCE" in cands[0].query
    assert Affordance.HEAT_SOURCE in cands[0].template.affordances


def test_valid_report_is_rejected():
    t = sample_clean_task(None, 0)
    with pytest.raises(ValueError):
        synthesize_static_repair(t, check_static(t))


def test_candidates_cost_ordered():
    for code in STATIC_CODES:
        t = defect_task(code, 1)
        costs = [c.kind for c in synthesize_static_repair(t, check_static(t))]
        from taskforge.task import OP_COST
        assert [OP_COST[k] for k in costs] == sorted(OP_COST[k] for k in costs)


def test_clean_task_untouched():
    t = sample_clean_task(None, 6)
    res = run_static_loop(t)
    assert res.task == t and res.ledger.ops == () and res.iterations == 0


def test_g3_within_budget_one():
    t = defect_task("D-G3", 2)
    res = run_static_loop(t, budget=1)
    assert [op.kind for op in res.ledger.ops] == ["RESCALE"]
    assert res.ledger.semantic_cost == 1
    assert res.report.valid
    assert semantic_distance(t, res.task, res.ledger) == 1


def test_s1_plus_g1_exceeds_budget_three(catalog):
    base = heat_s1()
    t = _inject_g1(base, np.random.default_rng(0), catalog)
    assert set(check_static(t).codes) == {"D-S1", "D-G1"}
    with pytest.raises(BudgetExceeded) as exc:
        run_static_loop(t, budget=3)
    assert exc.value.report is not None and not exc.value.report.valid
    # the same task is repairable at cost 4
    res = run_static_loop(t, budget=4)
    assert sorted(op.kind for op in res.ledger.ops) == ["SWAP_ASSET", "TRANSFORM_POSE"]
    assert res.ledger.semantic_cost == 4


def test_max_iter_failure():
    t = defect_task("D-G2", 0)
    with pytest.raises(RepairFailure):
        run_static_loop(t, budget=0)
    with pytest.raises(ValueError):
        run_static_loop(t, max_iter=0)


@given(st.sampled_from(STATIC_CODES), st.integers(0, 6), st.sampled_from([0, 1, 2, 3, 4]))
def test_budget_safety_and_monotone_score(code, seed, budget):
    t = defect_task(code, seed)
    try:
        res = run_static_loop(t, budget=budget)
    except RepairFailure as exc:
        assert exc.ledger is None or exc.ledger.semantic_cost <= budget
        return
    assert res.ledger.semantic_cost <= budget
    scores = [static_validity_score(r) for r in res.reports]
    assert scores == sorted(scores)
    assert scores[-1] == 1
    assert semantic_distance(t, res.task, res.ledger) == res.ledger.semantic_cost


def test_static_loop_deterministic():
    for code in STATIC_CODES:
        t = defect_task(code, 3)
        a, b = run_static_loop(t), run_static_loop(t)
        assert a.ledger == b.ledger


def grasp_index(task):
    return next(i for i, p in enumerate(task.policy.primitives) if p.kind.value == "GRASP")


def test_torque_within_cap():
    t = defect_task("D-D1", 0)
    item = t.scene.get(t.policy.primitives[grasp_index(t)].targets[0])
    t = replace(t, scene=t.scene.replace_entity(replace(item, mass=1.2 * t.scene.robot.torque_limit)))
    rep = execute(t, nominal_theta(t), seed=t.seed).report
    assert rep.cls == "GRASP_TORQUE"
    cands = synthesize_dynamic_repair(t, rep)
    assert [(c.kind, c.torque_scale) for c in cands] == [("TUNE_IMPEDANCE", 1.5)]
    assert execute(replay(t, RepairLedger(tuple(cands[:1]))), nominal_theta(t), seed=t.seed).success


def test_torque_beyond_cap_rescales_item():
    t = defect_task("D-D1", 0)
    t = replace(t, policy=replace(t.policy, torque_scale=1.5))
    item = t.scene.get(t.policy.primitives[grasp_index(t)].targets[0])
    t = replace(t, scene=t.scene.replace_entity(replace(item, mass=20 * t.scene.robot.torque_limit)))
    rep = execute(t, nominal_theta(t), seed=t.seed).report
    cands = synthesize_dynamic_repair(t, rep)
    assert cands == [Rescale(item.id, 0.8)]


def test_insertion_factor_is_largest_fitting():
    t = defect_task("D-D2", 0)
    tr = execute(t, nominal_theta(t), seed=t.seed)
    cp = [c for c in tr.checkpoints if c.index == tr.report.primitive][-1]
    (op,) = synthesize_dynamic_repair(t, tr.report, scene=cp.scene)
    iid, cid = t.policy.primitives[tr.report.primitive].targets
    c, it = cp.scene.get(cid), cp.scene.get(iid)
    fits = [f / 100 for f in range(25, 100) if query_containment(c, replace(it, scale=it.scale * f / 100), 0.01)]
    assert op.target == iid and op.factor == max(fits)


def test_dynamic_rules_by_class():
    t = sample_clean_task(None, 0)
    h = synthesize_dynamic_repair(t, DivergenceReport("HORIZON_EXHAUSTED", 0, 10, ""))
    assert [c.kind for c in h] == ["SET_HORIZON", "SET_SEARCH_WEIGHTS"]
    assert h[0].steps == 2 * t.policy.horizon
    assert dict(h[1].weights)["progress"] == 2 * t.policy.weights["progress"]
    c = synthesize_dynamic_repair(t, DivergenceReport("PLANNER_NO_PATH", 0, 0, ""))
    assert c[0].kind == "REPLAN_PATH" and c[0].inflation_r == pytest.approx(t.policy.inflation_r / 2)
    s = synthesize_dynamic_repair(t, DivergenceReport("PRECONDITION_ALREADY_MET", 1, 0, ""))
    assert [(x.kind, x.index) for x in s] == [("SKIP_SUBSTEP", 1)]


def test_no_dynamic_candidate():
    t = sample_clean_task(None, 0)
    # a clean grasp target is within the torque limit, so no torque repair applies
    k = next((i for i, p in enumerate(t.policy.primitives) if p.kind.value == "GRASP"), 0)
    with pytest.raises(NoCandidate):
        synthesize_dynamic_repair(t, DivergenceReport("GRASP_TORQUE", k, 0, ""))
