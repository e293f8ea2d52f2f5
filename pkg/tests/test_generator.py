import pytest
from hypothesis import given, strategies as st

from taskforge.audit import DEFECT_CODES, check_static
from taskforge.catalog import AssetCatalog
from taskforge.errors import CannotInject, EmptyCatalog, NotClean
from taskforge.executor import execute, nominal_theta
from taskforge.generator import (
    defect_task, inject_defect, sample_clean_task, sample_task, small_tasks, verify_defect,
)
from taskforge.task import canonical


@pytest.fixture(scope="module")
def thousand():
    return [sample_task(None, s) for s in range(1000)]


def test_same_seed_same_task():
    assert canonical(sample_task(None, 0)) == canonical(sample_task(None, 0))


def test_seed_coverage(thousand):
    assert len({t.template for t in thousand}) >= 5
    assert len({t.instruction.text for t in thousand}) >= 100


def test_no_duplicate_tasks_at_1cm(thousand):
    keys = set()
    for t in thousand:
        assets = tuple(sorted((e.id, e.asset) for e in t.scene.entities))
        poses = tuple(sorted((e.id, round(e.pose.x, 2), round(e.pose.y, 2)) for e in t.scene.entities))
        keys.add((t.template, assets, poses))
    assert len(keys) == len(thousand)


def test_forced_choice(catalog):
    tmpl = catalog.template("pick_up")
    single = AssetCatalog(tuple(catalog.get(a) for a in ("counter", "mug")),
                          (type(tmpl)(tmpl.name, tmpl.verb, tmpl.patterns,
                                      (type(tmpl.slots[0])("item", ("mug",), tmpl.slots[0].place),),
                                      tmpl.milestones, tmpl.primitives),))
    for s in range(5):
        t = sample_task(single, s)
        assert t.template == "pick_up"
        assert t.scene.get("item").asset == "mug"


def test_empty_catalog():
    with pytest.raises(EmptyCatalog):
        sample_task(AssetCatalog((), ()), 0)


@given(st.integers(0, 10_000))
def test_clean_tasks_are_clean(seed):
    t = sample_clean_task(None, seed)
    assert check_static(t).valid
    assert execute(t, nominal_theta(t), seed=t.seed).success


@pytest.mark.parametrize("code", DEFECT_CODES)
def test_every_code_injectable(code):
    t = defect_task(code, 0)
    assert verify_defect(t, code)
    report = check_static(t)
    if code.startswith("D-D"):
        assert report.valid
    else:
        assert report.codes == (code,)


def test_dynamic_defects_fail_nominal_rollout():
    for s in range(5):
        t = defect_task("D-D2", s)
        assert check_static(t).valid
        tr = execute(t, nominal_theta(t), seed=t.seed)
        assert tr.report.cls == "INSERTION_TOLERANCE"
    t = defect_task("D-D1", 0)
    assert execute(t, nominal_theta(t), seed=t.seed).report.cls == "GRASP_TORQUE"


def test_d_s3_presets_open_joint():
    t = defect_task("D-S3", 0)
    d = check_static(t).diagnostics[0]
    ent = t.scene.get(d.subjects[0])
    j = ent.joints[0]
    assert j.value == pytest.approx(j.hi)


def test_inject_needs_clean_input():
    dirty = defect_task("D-G1", 0)
    with pytest.raises(NotClean):
        inject_defect(dirty, "D-G3", 0)


def test_inject_rejects_missing_structure():
    t = next(sample_clean_task(None, s) for s in range(100)
             if sample_clean_task(None, s).template in ("pick_up", "open_articulated"))
    with pytest.raises(CannotInject):
        inject_defect(t, "D-G3", 0)


def test_small_tasks_have_at_most_two_params():
    assert all(t.policy.dim <= 2 for t in small_tasks().values())
