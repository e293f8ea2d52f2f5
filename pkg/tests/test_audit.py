from fractions import Fraction

import numpy as np
import pytest

from taskforge.audit import (
    CATEGORY, CHECKS, DEFECT_CODES, STATIC_CODES, Diagnostic, StaticAuditReport, check_static,
    static_validity_score,
)
from taskforge.feasibility import estimate_mu
from taskforge.generator import _inject_g1, defect_task, derive_seed, sample_clean_task
from taskforge.grid import query_reach
from taskforge.scene import Affordance, query_containment


def test_category_mapping():
    for code in DEFECT_CODES:
        expected = {"S": "SEMANTIC", "G": "GEOMETRIC", "D": "DYNAMIC"}[code[2]]
        assert CATEGORY[code] == expected


def test_clean_heat_task_is_valid():
    t = next(sample_clean_task(None, s) for s in range(200)
             if sample_clean_task(None, s).template == "heat_food")
    r = check_static(t)
    assert r.valid and r.diagnostics == ()
    assert [name for name, _ in r.checks_run] == list(CHECKS)
    assert static_validity_score(r) == 1


def test_s1_gives_one_semantic_diagnostic():
    r = check_static(defect_task("D-S1", 3))
    assert r.codes == ("D-S1",)
    assert r.diagnostics[0].category == "SEMANTIC"
    assert static_validity_score(r) == Fraction(3, 4)


def first_g3_g1(catalog):
    for s in range(40):
        t = defect_task("D-G3", s)
        try:
            return _inject_g1(t, np.random.default_rng(s), catalog)
        except Exception:
            continue
    raise AssertionError("no task accepted both defects")


def test_two_defects_two_diagnostics(catalog):
    t = first_g3_g1(catalog)
    r = check_static(t)
    assert set(r.codes) == {"D-G1", "D-G3"} and len(r.codes) == 2
    # cross-check with the geometry queries
    g1 = next(d for d in r.diagnostics if d.code == "D-G1")
    assert not query_reach(t.scene, g1.subjects[0])[0]
    g3 = next(d for d in r.diagnostics if d.code == "D-G3")
    ents = [t.scene.get(i) for i in g3.subjects]
    cont = next(e for e in ents if e.has(Affordance.CONTAINER))
    item = next(e for e in ents if e is not cont)
    assert not query_containment(cont, item, 0.01)
    assert static_validity_score(r) == Fraction(2, 4)


def test_score_extremes():
    assert static_validity_score(StaticAuditReport((), tuple((c, True) for c in CHECKS))) == 1
    diags = tuple(Diagnostic(c, ("x",), "") for c in ("D-G1", "D-S1", "D-G2", "D-G3"))
    assert static_validity_score(StaticAuditReport(diags, tuple((c, False) for c in CHECKS))) == 0


def test_report_round_trip():
    r = check_static(defect_task("D-S2", 0))
    assert StaticAuditReport.from_dict(r.to_dict()) == r
    assert r.diagnostics[0].missing


@pytest.mark.parametrize("code", STATIC_CODES)
def test_soundness_on_static_suite(code):
    for s in range(4):
        assert check_static(defect_task(code, s)).codes == (code,)


def test_complete_on_clean_tasks():
    for s in range(30):
        assert check_static(sample_clean_task(None, derive_seed(11, s))).valid


def test_dynamic_defects_invisible():
    for code in ("D-D1", "D-D2", "D-D3", "D-D4"):
        for s in range(3):
            assert check_static(defect_task(code, s)).valid


@pytest.mark.parametrize("code", STATIC_CODES)
def test_static_necessity(code):
    for s in range(2):
        t = defect_task(code, s)
        assert not check_static(t).valid
        assert estimate_mu(t, 48, s).mu_hat == 0.0
