from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from warmstate.bounds import (
    EPS_MAX,
    BoundInputs,
    bound_report,
    first_valid_gate,
    h6,
    h_cov,
    h_envelope,
    h_exact,
    k_minus,
    k_plus,
    max_radius_meta,
    max_radius_vqe,
    max_step_meta,
    max_step_vqe,
    move_gate_first,
    variance_bound_vqe,
)
from warmstate.pauli_model import PauliString
from warmstate.statevector import Ansatz, Gate, build_hea, prepare


def _inputs(**kw) -> BoundInputs:
    base = dict(gap=1.0, h_seminorm=8.0, h1_seminorm=10.0, M=16)
    base.update(kw)
    return BoundInputs(**base)


# --------------------------------------------------------------------------
# averaging functions


def test_k_examples():
    assert k_plus(0.0) == 1.0 and k_minus(0.0) == 0.0
    assert k_plus(1e-9) == pytest.approx(1.0)
    assert k_plus(math.pi / 2) == pytest.approx(0.5, abs=1e-15)


def test_k_plus_matches_quadrature():
    r = 0.3
    val, _ = quad(lambda a: math.cos(a) ** 2, -r, r, epsabs=1e-14, epsrel=1e-14)
    assert k_plus(r) == pytest.approx(val / (2 * r), abs=1e-10)


def test_k_sum_is_one_on_grid():
    r = np.linspace(1e-6, math.pi, 2000)
    np.testing.assert_allclose(k_plus(r) + k_minus(r), 1.0, atol=1e-14)


@given(st.floats(1e-4, 3.0))
def test_h_exact_matches_quadrature_variance(r):
    m1 = quad(lambda a: math.cos(a) ** 2, -r, r, epsabs=1e-15, epsrel=1e-13)[0] / (2 * r)
    m2 = quad(lambda a: math.cos(a) ** 4, -r, r, epsabs=1e-15, epsrel=1e-13)[0] / (2 * r)
    assert h_exact(r) == pytest.approx(m2 - m1 ** 2, abs=1e-12)


def test_h_exact_examples():
    assert h_exact(0.0) == 0.0
    rng = np.random.default_rng(0)
    vals = np.cos(rng.uniform(-0.5, 0.5, 10 ** 6)) ** 2
    dev = vals - vals.mean()
    n = vals.size
    s2 = dev.var(ddof=1)
    se = math.sqrt((np.mean(dev ** 4) - (n - 3) / (n - 1) * s2 ** 2) / n)
    assert abs(h_exact(0.5) - s2) <= 3 * se


def test_h_series_and_closed_form_agree_at_switch():
    # both branches of h_exact evaluated at nearby points stay continuous
    assert h_exact(0.25 - 1e-9) == pytest.approx(h_exact(0.25 + 1e-9), rel=1e-6)


def test_h_envelope_examples():
    assert h_envelope(0.0) == 0.0
    assert h_envelope(math.sqrt(7) / 2) == pytest.approx(0.0, abs=1e-15)
    assert h_envelope(0.5) == pytest.approx((1 - 1 / 7) * 4 * 0.0625 / 45)


def test_h_exact_dominates_envelope():
    r = np.linspace(1e-3, 1.2, 1000)
    assert np.all(h_exact(r) >= h_envelope(r))


def test_h_cov_diagonal_and_degenerate_examples():
    r = np.linspace(1e-3, 1.5, 300)
    np.testing.assert_allclose(h_cov(1.0, 1.0, r), h_exact(r), atol=1e-12)
    assert h_cov(1.0, 0.0, 0.7) == pytest.approx(0.0, abs=1e-15)
    # the printed prefactors break the diagonal reduction
    assert abs(h_cov(1.0, 1.0, 0.7, printed=True) - h_exact(0.7)) > 1e-3


def test_h_cov_matches_monte_carlo():
    rng = np.random.default_rng(1)
    alpha = rng.uniform(-0.4, 0.4, 10 ** 6)
    u = np.cos(1.0 * alpha) ** 2
    v = np.cos(0.7 * alpha) ** 2
    prod = (u - u.mean()) * (v - v.mean())
    cov = prod.sum() / (alpha.size - 1)
    se = prod.std(ddof=1) / math.sqrt(alpha.size)
    assert abs(h_cov(1.0, 0.7, 0.4) - cov) <= 3 * se


def test_h6_examples():
    assert h6(0.0, 0.0) == 0.0
    assert h6(1.0, 0.0) == pytest.approx(2 ** 6 * 3 / 7)
    assert h6(0.0, 1.0) == pytest.approx(2 ** 6 * 3 / 7)
    # the duplicated a b^5 term breaks the a <-> b symmetry by 2^6 (1/7 + 1/2 - 1/2) (a b^5 - a^5 b)
    a, b = 0.9, 0.4
    assert h6(a, b) - h6(b, a) == pytest.approx(2 ** 6 * (1 / 7) * (a * b ** 5 - a ** 5 * b), rel=1e-12)


# --------------------------------------------------------------------------
# budgets


def test_max_step_vqe_examples():
    assert max_step_vqe(_inputs(gap=0.0)) == 0.0
    assert max_step_vqe(_inputs(eps=EPS_MAX)) == pytest.approx(0.0, abs=1e-15)
    assert max_step_vqe(_inputs(gap=1.0, h1_seminorm=10.0, eps=0.0, gamma_tilde=0.5)) == pytest.approx(0.05)
    assert max_step_vqe(_inputs(h1_seminorm=0.0)) == math.inf


def test_max_step_meta_examples():
    plain = _inputs(g_max_deriv=0.0)
    assert max_step_meta(plain) == pytest.approx(max_step_vqe(plain))
    assert max_step_meta(_inputs(gap=0.0, g_max_deriv=1.0)) == 0.0
    ex = BoundInputs(gap=1.0, h_seminorm=6.0, h1_seminorm=4.0, M=8, g_max_deriv=1.0, eps=0.0, gamma_tilde=0.5)
    assert max_step_meta(ex) == pytest.approx(0.5 / 52, rel=1e-12)
    assert max_step_meta(ex) == pytest.approx(0.009615, abs=1e-6)


def test_refined_meta_step_solves_quadratic():
    ex = BoundInputs(gap=1.0, h_seminorm=6.0, h1_seminorm=4.0, M=8, g_max_deriv=1.0, gamma_tilde=1.0)
    d = max_step_meta(ex, refined=True)
    a, b = 8 * 6 + 4, 8 * 4
    assert b * d * d + a * d == pytest.approx(1.0, rel=1e-12)


def test_max_radius_vqe_examples():
    assert max_radius_vqe(_inputs(gap=0.0)) == 0.0
    ex = BoundInputs(gap=1.0, h_seminorm=9.0, h1_seminorm=1.0, M=101, gamma=1.0, gamma_tilde=0.0, eps=0.0)
    assert max_radius_vqe(ex) ** 2 == pytest.approx(0.003, rel=1e-12)
    assert max_radius_vqe(ex) == pytest.approx(0.05477, abs=1e-5)
    with pytest.raises(ValueError):
        max_radius_vqe(_inputs(M=1))


def test_max_radius_vqe_shrinks_with_M():
    budgets = [max_radius_vqe(_inputs(M=M)) for M in range(2, 200)]
    assert all(b1 > b2 for b1, b2 in zip(budgets, budgets[1:]))


def test_max_radius_meta_examples():
    base = BoundInputs(gap=1.0, h_seminorm=5.0, h1_seminorm=2.0, M=10, gamma=0.5, gamma_tilde=0.5)
    assert max_radius_meta(base, [0.0, 1.0], [0.0, 0.0]) == 0.0
    # two training points: the pair term and the gap term evaluated by hand
    g = [0.3, 0.6]
    pair = min(4 * a * a * b * b / (45 * h6(a, b)) for a in g for b in g)
    gap_term = 3.0 / (1.0 * 9) * 0.5 * 1.0 / (5.0 + 1.0)
    assert max_radius_meta(base, [0.0, 1.0], g) == pytest.approx(math.sqrt(0.5 * min(pair, gap_term)))
    # the pair term grows like 1/g^2, so tiny encodings leave the gap term in charge
    big = max_radius_meta(base, [0.0], [1e-3])
    assert big == pytest.approx(math.sqrt(0.5 * gap_term))


def test_variance_bound_examples():
    inp = BoundInputs(gap=1.0, h_seminorm=1.0, h1_seminorm=1.0, M=2, gamma=0.5, gamma_tilde=0.5, eps=0.0)
    assert variance_bound_vqe(inp, 0.0) == 0.0
    expected = (1 - 0.04 / 7) * (4e-4 / 45) * 0.25 ** 2
    assert max_radius_vqe(inp) > 0.1
    assert variance_bound_vqe(inp, 0.1) == pytest.approx(expected, rel=1e-12)
    assert variance_bound_vqe(_inputs(eps=EPS_MAX, M=2), 0.01) == pytest.approx(0.0, abs=1e-20)


def test_variance_bound_zero_outside_radius_or_step():
    inp = _inputs()
    r = max_radius_vqe(inp)
    assert variance_bound_vqe(inp, 1.01 * r) == 0.0
    assert variance_bound_vqe(inp, 0.5 * r, step=2 * max_step_vqe(inp)) == 0.0
    assert variance_bound_vqe(inp, 0.5 * r, step=0.5 * max_step_vqe(inp)) > 0


@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.floats(0.0, 0.7))
def test_variance_bound_monotone_in_gap_and_eps(g1, g2, eps):
    lo, hi = sorted((g1, g2))
    r = 0.01
    a = variance_bound_vqe(BoundInputs(gap=lo, h_seminorm=3, h1_seminorm=1, M=4, eps=eps), r)
    b = variance_bound_vqe(BoundInputs(gap=hi, h_seminorm=3, h1_seminorm=1, M=4, eps=eps), r)
    assert b >= a
    c = variance_bound_vqe(BoundInputs(gap=hi, h_seminorm=3, h1_seminorm=1, M=4, eps=min(eps + 0.005, EPS_MAX)), r)
    assert c <= b


def test_inputs_validation():
    with pytest.raises(ValueError):
        _inputs(eps=0.8)
    with pytest.raises(ValueError):
        _inputs(gamma=1.5)
    with pytest.raises(ValueError):
        _inputs(M=0)
    assert _inputs(gap=-2.0).gap == 2.0


def test_budgets_never_negative():
    for eps in np.linspace(0, EPS_MAX, 7):
        inp = _inputs(eps=float(eps))
        assert max_step_vqe(inp) >= 0 and max_radius_vqe(inp) >= 0 and max_step_meta(inp) >= 0


def test_bound_report_flags_and_serialisation():
    rep = bound_report(_inputs(gap=0.0))
    assert rep.max_step == 0 and rep.max_radius == 0 and rep.variance_lower == 0
    assert not rep.conditions_met["all"]
    d = bound_report(_inputs(h1_seminorm=0.0)).to_dict()
    assert d["max_step"] == "inf"
    rep = bound_report(_inputs(), first_gate=None)
    assert rep.variance_lower == 0 and not rep.conditions_met["first_gate_nontrivial"]


# --------------------------------------------------------------------------
# first-gate condition


def test_first_valid_gate_examples():
    assert first_valid_gate(Ansatz(1, (Gate.rotation("X"), Gate.rotation("Z")))) == 0
    assert first_valid_gate(Ansatz(2, (Gate.rotation("ZI"), Gate.rotation("ZZ")))) is None
    assert first_valid_gate(build_hea(4, 1)) == 4


def test_move_gate_first_reorders_only_one_gate():
    a = build_hea(3, 1)
    b = move_gate_first(a, 3)
    assert b.generators[0] == a.generators[3]
    assert b.generators[1:] == a.generators[:3] + a.generators[4:]
    assert first_valid_gate(b) == 0
    theta = np.zeros(a.M)
    np.testing.assert_allclose(prepare(b, theta).amplitudes, prepare(a, theta).amplitudes)
    assert isinstance(b.generators[0], PauliString)
