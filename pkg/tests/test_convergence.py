import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from taskforge.convergence import (
    AlignedOracle, anisotropic_quadratic, estimate_rate, exact_gradient, max_step, measure_pl_constants,
    nonconvex_pl, quadratic, rate, rotated_gradient, run_descent, scaled_gradient,
)
from taskforge.errors import InsufficientIterations, OracleViolation


def test_half_step_certified(frozen):
    pot, orc = quadratic(2.0), exact_gradient()
    rep = run_descent(pot, orc, eta=1 / 4, K=50)
    assert rep.rho == pytest.approx(0.75, abs=1e-15)
    assert rep.admissible and rep.certified
    assert rep.J == pytest.approx(frozen["quadratic_J"], rel=1e-12, abs=1e-300)
    assert all(b <= (1 - rep.rho) * a + 1e-12 for a, b in zip(rep.J, rep.J[1:]))
    assert estimate_rate(rep) == pytest.approx(0.75, abs=1e-9)


def test_full_step_one_shot():
    rep = run_descent(quadratic(2.0), exact_gradient(), eta=1 / 2, K=10)
    assert rep.rho == pytest.approx(1.0)
    assert rep.J[0] == 1.25 and rep.J[1] == 0.0


def test_oversized_step_inadmissible():
    pot, orc = quadratic(2.0), exact_gradient()
    assert max_step(pot, orc) == pytest.approx(1.0)
    rep = run_descent(pot, orc, eta=3 / 2, K=10)
    assert not rep.admissible and not rep.certified
    assert rep.J[-1] > rep.J[0]


def test_constant_sequence_rejected():
    rep = run_descent(quadratic(), exact_gradient(), x0=(0.0, 0.0), eta=0.25, K=20)
    with pytest.raises(InsufficientIterations):
        estimate_rate(rep)


def test_bad_oracle_aborts():
    flipped = AlignedOracle("flipped", lambda x, g: -np.asarray(g), 1.0, 1.0)
    with pytest.raises(OracleViolation):
        run_descent(quadratic(), flipped, eta=0.1, K=5)
    long = AlignedOracle("long", lambda x, g: 3 * np.asarray(g), 1.0, 1.0)
    with pytest.raises(OracleViolation):
        run_descent(quadratic(), long, eta=0.1, K=5)


def test_argument_checks():
    with pytest.raises(ValueError):
        run_descent(quadratic(), exact_gradient(), eta=0.0)
    with pytest.raises(ValueError):
        run_descent(quadratic(), exact_gradient(), eta=0.1, K=0)
    with pytest.raises(ValueError):
        run_descent(quadratic(dim=2), exact_gradient(), x0=(1.0,), eta=0.1)
    with pytest.raises(ValueError):
        rotated_gradient(math.pi / 2)


def test_pl_constants_measured():
    L, nu = measure_pl_constants()
    assert L == pytest.approx(8.0, abs=1e-6)
    assert 0 < nu < L


def test_nonconvex_rate_at_least_certified():
    pot, orc = nonconvex_pl(), exact_gradient()
    eta = 0.5 * max_step(pot, orc)
    rep = run_descent(pot, orc, eta=eta, K=200)
    assert rep.admissible and rep.certified
    assert estimate_rate(rep) >= rep.rho - 0.05


potentials = st.sampled_from([quadratic(1.0), quadratic(3.0, dim=3), anisotropic_quadratic(), nonconvex_pl()])


@given(potentials, st.floats(0.05, 0.95), st.sampled_from(["exact", "scaled", "rotated"]))
def test_certificate_and_monotone_descent(pot, frac, kind):
    if kind == "exact":
        orc = exact_gradient()
    elif kind == "scaled":
        orc = scaled_gradient(np.linspace(0.5, 1.0, pot.dim))
    else:
        if pot.dim != 2:
            return
        orc = rotated_gradient(0.4)
    eta = frac * max_step(pot, orc)
    rep = run_descent(pot, orc, eta=eta, K=60)
    assert rep.admissible and rep.certified
    assert rate(pot, orc, eta) > 0
    assert all(b <= a + 1e-12 for a, b in zip(rep.J, rep.J[1:]))


def test_report_serialization():
    rep = run_descent(quadratic(), exact_gradient(), eta=0.25, K=3)
    d = rep.to_dict()
    assert d["steps"] == 3 and d["certified"]
    assert rep.to_csv().splitlines()[0] == "k,J"
