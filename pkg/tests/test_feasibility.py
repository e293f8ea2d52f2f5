from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from taskforge.errors import GridTooLarge
from taskforge.executor import ExecutionConfig
from taskforge.feasibility import (
    MuCache, brute_force_mu, estimate_mu, feasibility_gap, infeasibility_potential, sample_thetas,
    wilson_interval,
)
from taskforge.generator import (
    already_done_task, defect_task, derive_seed, grasp_and_slide_task, half_plane_grasp_task, heavy_grasp_task,
    sample_clean_task, sample_task,
)
from taskforge.pipeline import PipelineConfig, run_batch


def test_goal_already_met_gives_one():
    for n in (1, 7, 64):
        assert estimate_mu(already_done_task(), n, 3).mu_hat == 1.0


def test_unreachable_gives_zero():
    assert estimate_mu(defect_task("D-G1", 0), 64, 0).mu_hat == 0.0


def test_half_plane_brute_force(frozen):
    wins, pts = frozen["half_plane_101"]
    assert brute_force_mu(half_plane_grasp_task(), pts) == pytest.approx(wins / pts, abs=1e-12)


def test_half_plane_mc_within_interval():
    est = estimate_mu(half_plane_grasp_task(), 1024, 0)
    assert abs(est.mu_hat - 0.5) <= est.ci_half_width


def test_stroke_axis(frozen):
    # the two axes are independent, so the grid count factorizes
    sw, pts = frozen["stroke_101"]
    hw, _ = frozen["half_plane_101"]
    assert brute_force_mu(grasp_and_slide_task(), pts) == pytest.approx(sw * hw / pts ** 2, abs=1e-12)


def test_brute_force_extremes():
    assert brute_force_mu(already_done_task(), 11) == 1.0
    assert brute_force_mu(heavy_grasp_task(), 11) == 0.0
    with pytest.raises(GridTooLarge):
        brute_force_mu(grasp_and_slide_task(), 1001)


def test_wilson_matches_roots(frozen):
    for key, (center, hw) in frozen["wilson"].items():
        k, n = map(int, key.split("/"))
        c, h = wilson_interval(k, n)
        assert c == pytest.approx(center, abs=1e-12)
        assert h == pytest.approx(hw, abs=1e-12)


@given(st.integers(0, 2000), st.integers(1, 2000))
def test_wilson_contains_point_estimate(k, n):
    k = min(k, n)
    c, h = wilson_interval(k, n)
    assert c - h - 1e-12 <= k / n <= c + h + 1e-12
    assert 0 <= c - h + 1e-12 and c + h <= 1 + 1e-12


@given(st.floats(0, 1), st.floats(0.01, 0.99))
def test_potential_zero_iff_feasible(mu, delta):
    j = infeasibility_potential(mu, delta)
    assert j >= 0
    assert (j == 0) == (mu >= delta)


def test_estimate_j_consistent():
    for t in (already_done_task(), heavy_grasp_task(), half_plane_grasp_task()):
        est = estimate_mu(t, 128, 1)
        assert (est.J == 0) == est.feasible or est.mu_hat == est.delta_min
        assert est.mu_hat == est.successes / est.n_samples


def test_estimate_reproducible():
    t = sample_clean_task(None, 8)
    assert estimate_mu(t, 64, 5) == estimate_mu(t, 64, 5)


def test_sample_rows_depend_on_index_only():
    t = grasp_and_slide_task()
    assert np.array_equal(sample_thetas(t, 10, 4), sample_thetas(t, 20, 4)[:10])
    sob = sample_thetas(t, 16, 4, "sobol")
    lo, hi = t.policy.bounds
    assert np.all(sob >= lo) and np.all(sob <= hi)


@given(st.integers(0, 500), st.integers(1, 300))
def test_mu_monotone_in_horizon(seed, h):
    t = sample_task(None, seed)
    cfg = ExecutionConfig.for_task(t)
    a = estimate_mu(t, 16, seed, config=replace(cfg, horizon=h))
    b = estimate_mu(t, 16, seed, config=replace(cfg, horizon=h + 100))
    assert b.successes >= a.successes


def test_gap_examples():
    mu = MuCache()
    clean = [sample_clean_task(None, derive_seed(9, i)) for i in range(10)]
    assert feasibility_gap([(t, t) for t in clean], 64, 0, mu=mu) == (0.0, 0.0)
    bad = [defect_task("D-G1", i) for i in range(10)]
    assert feasibility_gap([(t, t) for t in bad], 64, 0, mu=mu)[0] == 1.0
    with pytest.raises(ValueError):
        feasibility_gap([])


def test_gap_shrinks_through_pipeline():
    by_mode, _ = run_batch(PipelineConfig(mu_samples=64), 200, modes=("full",))
    pairs = [(r.initial_task, r.final_task) for r in by_mode["full"]]
    before, after = feasibility_gap(pairs, 64, 0)
    print(f"feasibility gap before {before:.3f} after {after:.3f}")
    assert after < before
