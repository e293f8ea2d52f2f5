import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from taskforge.errors import CorpusTooSmall, InconsistentRecord
from taskforge.metrics import (
    PRF, REFERENCE_ROWS, PipelineRecord, compute_metrics, self_bleu4, sentence_bleu, to_csv, to_markdown, tokenize,
)


def rec(i, static, exe, label=None, codes=(), instep=None, stages=None):
    r = PipelineRecord(i, label, "full", static_pass=static, exec_pass=exe,
                       feasible=static and bool(exe), ante_codes=tuple(codes), instep_code=instep,
                       instep_run=exe is not None)
    if stages:
        r.stages.update(stages)
    return r


def test_all_pass():
    m = compute_metrics([rec(i, True, True) for i in range(4)])
    assert m.svr == m.evr == m.ftr == 1


def test_mixed_counts():
    m = compute_metrics([rec(0, False, None), rec(1, True, False), rec(2, True, True), rec(3, True, True)])
    assert (m.svr, m.evr, m.ftr) == (Fraction(3, 4), Fraction(2, 3), Fraction(1, 2))
    assert m.ftr == m.svr * m.evr


def test_reference_rows():
    assert REFERENCE_ROWS[0][1:] == (41.5, 30.4, 12.6)
    assert REFERENCE_ROWS[1][1:] == (97.5, 94.5, 92.1)
    md = to_markdown({"full": compute_metrics([rec(0, True, True)])}, "batch")
    assert "41.5" in md and "92.1" in md


def test_inconsistent_records_rejected():
    with pytest.raises(InconsistentRecord):
        compute_metrics([PipelineRecord(0, None, "full", static_pass=False, exec_pass=True)])
    with pytest.raises(InconsistentRecord):
        compute_metrics([PipelineRecord(0, None, "full", static_pass=True, exec_pass=False, feasible=True)])
    bad = rec(0, True, True)
    bad.stages["ANTE"] = [1, 2]
    with pytest.raises(InconsistentRecord):
        compute_metrics([bad])


outcomes = st.sampled_from([(False, None), (True, False), (True, True)])


@given(st.lists(outcomes, min_size=1, max_size=40))
def test_ftr_is_product(outs):
    m = compute_metrics([rec(i, s, e) for i, (s, e) in enumerate(outs)])
    assert m.ftr == m.svr * m.evr


@given(st.lists(outcomes, min_size=1, max_size=40))
def test_perfect_record_never_hurts(outs):
    recs = [rec(i, s, e) for i, (s, e) in enumerate(outs)]
    a = compute_metrics(recs)
    b = compute_metrics(recs + [rec(len(recs), True, True)])
    assert b.svr >= a.svr and b.evr >= a.evr and b.ftr >= a.ftr


def test_rsr_and_auditor():
    recs = [
        rec(0, True, True, "D-G3", ("D-G3",), stages={"ANTE": [1, 1]}),
        rec(1, True, True, "D-S1", ("D-S1",), stages={"ANTE": [1, 0]}),
        rec(2, True, True, "D-D2", (), "D-D2", stages={"PRIMITIVE": [1, 1]}),
        rec(3, True, True, None, ()),
    ]
    m = compute_metrics(recs)
    assert m.rsr["ANTE"] == Fraction(1, 2) and m.rsr["PRIMITIVE"] == 1 and m.rsr["SEARCH"] is None
    assert m.auditor[("ANTE", "GEOMETRIC")] == PRF(1, 0, 0)
    assert m.auditor[("ANTE", "DYNAMIC")].recall == 0
    assert m.auditor[("INSTEP", "DYNAMIC")] == PRF(1, 0, 0)
    assert "rsr_ante" in to_csv({"full": m}).split("\n")[5]


def test_prf_f1_harmonic():
    p = PRF(3, 1, 2)
    assert p.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35)
    assert PRF(0, 0, 0).f1 is None


def test_tokenize():
    assert tokenize("Put the Pot-Lid on, please!") == ["put", "the", "pot", "lid", "on", "please"]


def test_identical_corpus_scores_one():
    assert self_bleu4(["heat the meal in the microwave"] * 10) == 1.0


def test_hand_computed_pairs(frozen):
    assert self_bleu4(["the cat sat on the mat", "the cat sat on a mat"]) == pytest.approx(
        frozen["bleu"]["cat_mat"], abs=1e-9)
    assert self_bleu4(["a b c d", "a b x y z"]) == pytest.approx(frozen["bleu"]["abcd_abxyz"], abs=1e-9)
    disjoint = self_bleu4(["open the fridge door", "slide window closed now"])
    assert disjoint == frozen["bleu"]["disjoint"]
    assert disjoint < 0.05


def test_matches_pairwise_definition():
    corpus = ["open the fridge", "open the oven door", "put the pot on the table", "open the fridge now"]
    toks = [tokenize(s) for s in corpus]
    naive = math.fsum(sentence_bleu(t, toks[:i] + toks[i + 1:]) for i, t in enumerate(toks)) / len(toks)
    assert self_bleu4(corpus) == pytest.approx(naive, abs=1e-15)


def test_permutation_invariance():
    from taskforge.generator import derive_seed, sample_clean_task
    corpus = [sample_clean_task(None, derive_seed(1, i)).instruction.text for i in range(40)]
    ref = self_bleu4(corpus)
    rng = random.Random(0)
    for _ in range(20):
        rng.shuffle(corpus)
        assert self_bleu4(corpus) == ref


def test_corpus_too_small():
    with pytest.raises(CorpusTooSmall):
        self_bleu4(["only one"])
