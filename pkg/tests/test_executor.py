import json
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from taskforge.errors import RepairFailure
from taskforge.executor import ExecutionConfig, execute, execute_from, nominal_theta, run_dynamic_loop
from taskforge.feasibility import sample_thetas
from taskforge.generator import defect_task, derive_seed, sample_clean_task, sample_task
from taskforge.scene import Affordance, SetJoint
from taskforge.task import Inside, JointAt, apply_op, replay, semantic_distance


def clean_of(template, start=0):
    for s in range(start, start + 400):
        t = sample_clean_task(None, s)
        if t.template == template:
            return t
    raise AssertionError(template)


def state(trace):
    return [(s, sc.to_dict(), h) for s, sc, h in trace.snapshots]


def test_clean_pot_task_succeeds_in_order():
    t = clean_of("ingredient_into_pot")
    tr = execute(t, nominal_theta(t), seed=t.seed)
    assert tr.success and tr.outcome == "SUCCESS"
    assert all(m is not None for m in tr.milestone_times)
    assert tr.milestone_times == sorted(tr.milestone_times)
    assert tr.steps <= t.policy.horizon


def test_dynamic_defects_diverge_with_class():
    t = defect_task("D-D1", 0)
    tr = execute(t, nominal_theta(t), seed=t.seed)
    assert tr.report.cls == "GRASP_TORQUE"
    assert t.policy.primitives[tr.report.primitive].kind.value == "GRASP"
    t = defect_task("D-D2", 0)
    assert execute(t, nominal_theta(t), seed=t.seed).report.cls == "INSERTION_TOLERANCE"


def test_trace_jsonl_header_first():
    t = sample_clean_task(None, 4)
    lines = execute(t, nominal_theta(t), seed=1).to_jsonl().splitlines()
    first, last = json.loads(lines[0]), json.loads(lines[-1])
    assert first["record"] == "header" and first["config"]["c_min"] == 0.01
    assert last["record"] == "outcome"
    assert all(json.loads(x)["record"] == "step" for x in lines[1:-1])


def test_theta_out_of_box_rejected():
    t = sample_clean_task(None, 4)
    lo, _ = t.policy.bounds
    with pytest.raises(ValueError):
        execute(t, lo - 1.0)


@given(st.integers(0, 5000), st.integers(0, 2 ** 31))
def test_execute_deterministic(task_seed, seed):
    t = sample_task(None, task_seed)
    th = sample_thetas(t, 1, seed)[0]
    a, b = execute(t, th, seed=seed), execute(t, th, seed=seed)
    assert a.to_jsonl() == b.to_jsonl()


def test_checkpoint_soundness_100_tasks():
    checked = 0
    for i in range(100):
        t = sample_task(None, derive_seed(123, i))
        th = sample_thetas(t, 1, i)[0]
        full = execute(t, th, seed=i)
        for cp in full.checkpoints:
            resumed = execute_from(t, th, cp, prefix=full, seed=i)
            assert resumed.to_jsonl() == full.to_jsonl()
            assert state(resumed) == state(full)
            bare = execute_from(t, th, cp, seed=i)
            assert bare.records == [r for r in full.records if r["primitive"] >= cp.index]
            assert state(bare)[-1] == state(full)[-1]
            checked += 1
    assert checked >= 100


@given(st.integers(0, 3000), st.integers(1, 400), st.integers(1, 400))
def test_horizon_monotone(task_seed, h, extra):
    t = sample_task(None, task_seed)
    th = nominal_theta(t)
    short = execute(t, th, replace(ExecutionConfig.for_task(t), horizon=h), seed=3)
    if short.success:
        long = execute(t, th, replace(ExecutionConfig.for_task(t), horizon=h + extra), seed=3)
        assert long.success
        assert long.records == short.records


def test_dynamic_loop_replans_corridor():
    t = defect_task("D-D3", 0)
    res = run_dynamic_loop(t, seed=t.seed)
    assert res.reports[0].cls == "PLANNER_NO_PATH"
    assert [op.kind for op in res.ledger.ops] == ["REPLAN_PATH"]
    assert res.ledger.ops[0].inflation_r == pytest.approx(t.policy.inflation_r / 2)
    assert res.ledger.semantic_cost == 0
    assert res.trace.success


def test_dynamic_loop_tunes_impedance():
    t = defect_task("D-D1", 0)
    res = run_dynamic_loop(t, seed=t.seed)
    assert [op.kind for op in res.ledger.ops] == ["TUNE_IMPEDANCE"]
    assert res.ledger.ops[0].torque_scale == pytest.approx(1.5)
    assert res.trace.success


def test_dynamic_loop_skips_satisfied_substep():
    t = clean_of("heat_food")
    app = t.scene.get("appliance")
    assert app.has(Affordance.OPENABLE)
    j = app.joints[0]
    t = apply_op(t, SetJoint("appliance", 0, j.hi))
    instr = replace(t.instruction, milestones=(JointAt("appliance", 0, j.hi, 0.1), Inside("item", "appliance")))
    t = replace(t, instruction=instr)
    res = run_dynamic_loop(t, seed=t.seed)
    assert res.reports[0].cls == "PRECONDITION_ALREADY_MET"
    assert [op.kind for op in res.ledger.ops] == ["SKIP_SUBSTEP"]
    assert res.trace.success


def test_rollback_keeps_prefix():
    t = defect_task("D-D2", 0)
    res = run_dynamic_loop(t, seed=t.seed)
    k = res.reports[0].primitive
    first = execute(t, nominal_theta(t), seed=t.seed)
    before = [r for r in first.records if r["primitive"] < k]
    assert [r for r in res.trace.records if r["primitive"] < k] == before
    assert semantic_distance(t, res.task, res.ledger) == res.ledger.semantic_cost
    assert replay(t, res.ledger) == res.task


def test_impossible_insertion_is_failure():
    t = defect_task("D-D2", 1)
    with pytest.raises(RepairFailure) as exc:
        run_dynamic_loop(t, ExecutionConfig(c_min=0.5), seed=t.seed)
    assert exc.value.kind in ("MaxRounds", "NoCandidate")
    assert exc.value.report.cls == "INSERTION_TOLERANCE"
