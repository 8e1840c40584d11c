"""Truncated convex solvers: truncation growth, grouped coefficients, gradients."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specot import make_instance, solve_h_star, solve_outer_residuals
from specot.convex import (
    EarlyTermination,
    TruncatedObjective,
    eval_inner,
    eval_outer,
    minimize,
    pie_coefficients,
    select_truncation,
    solve_system,
    truncation_cap,
)

from instgen import ex1, random_instance


def _prepared(inst):
    sol = solve_h_star(inst)
    return sol, solve_outer_residuals(inst, sol)


def test_caps_by_draft_count():
    assert truncation_cap(1) == 50
    assert truncation_cap(2) == 50
    assert truncation_cap(3) == 20
    assert truncation_cap(4) == 10
    assert truncation_cap(5) == 10
    assert truncation_cap(9) == 10


def test_truncation_on_worked_example():
    inst = ex1()
    sol, _ = _prepared(inst)
    inner = select_truncation(inst, sol, "inner")
    # selection order follows decreasing drafter mass
    assert inner.tokens == (2, 1)
    assert inner.tunable_error == 0.0
    outer = select_truncation(inst, sol, "outer")
    assert outer.tokens == (0,)
    assert outer.tunable_error == 0.0


def test_truncation_cap_hit_raises():
    inst = ex1()
    sol, _ = _prepared(inst)
    with pytest.raises(EarlyTermination) as err:
        select_truncation(inst, sol, "inner", cap_override=1)
    assert err.value.reason == "truncation_too_large"


def test_truncation_rejects_unknown_kind():
    inst = ex1()
    sol, _ = _prepared(inst)
    with pytest.raises(ValueError):
        select_truncation(inst, sol, "sideways")


def test_truncation_respects_loose_budget():
    # tau large enough that a single token suffices for the inner side
    inst = ex1()
    sol, _ = _prepared(inst)
    tr = select_truncation(inst, sol, "inner", tau=0.4)
    assert tr.tokens == (2,)
    # gamma = 0.8^2 - 0.5^2
    assert tr.tunable_error == pytest.approx(0.39, abs=1e-12)


def test_grouped_coefficients_on_worked_example():
    inst = ex1()
    sol, _ = _prepared(inst)
    inner = pie_coefficients(inst, sol, select_truncation(inst, sol, "inner"))
    assert inner.subsets == ((1,), (2,), (1, 2))
    assert inner.coeffs == pytest.approx([0.09, 0.25, 0.30], abs=1e-12)
    assert inner.total_coeff == pytest.approx(0.64, abs=1e-12)
    outer = pie_coefficients(inst, sol, select_truncation(inst, sol, "outer"))
    assert outer.subsets == ((0,),)
    assert outer.coeffs == pytest.approx([0.36], abs=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_coefficient_totals_have_closed_form(seed):
    """Pre-drop coefficient sums must equal the grouped draft mass."""
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_vocab=7, max_n=3)
    sol, _ = _prepared(inst)
    q = inst.q.mass
    q_h = math.fsum(float(q[i]) for i in sol.h_star)
    if sol.h_star:
        tr = select_truncation(inst, sol, "inner")
        tab = pie_coefficients(inst, sol, tr)
        q_t = math.fsum(float(q[i]) for i in tr.tokens)
        assert tab.total_coeff == pytest.approx(q_t**inst.n, abs=1e-12)
        assert np.all(tab.coeffs >= 0.0)
    if any(int(t) not in sol.h_star for t in inst.active_vocab):
        tr = select_truncation(inst, sol, "outer")
        tab = pie_coefficients(inst, sol, tr)
        q_t = math.fsum(float(q[i]) for i in tr.tokens)
        expect = (q_h + q_t) ** inst.n - q_h**inst.n
        assert tab.total_coeff == pytest.approx(expect, abs=1e-12)
        assert np.all(tab.coeffs >= 0.0)


def test_outer_objective_is_identically_zero_with_one_token():
    # lse over a single coordinate cancels the linear term exactly when
    # the coefficient equals the row target, as it does here
    inst = ex1()
    sol, res = _prepared(inst)
    tab = pie_coefficients(inst, sol, select_truncation(inst, sol, "outer"))
    for a in (-3.0, 0.0, 1.7, 12.0):
        value, grad = eval_outer(inst, res, tab, np.array([a]))
        assert value == pytest.approx(0.0, abs=1e-12)
        assert grad[0] == pytest.approx(0.0, abs=1e-12)


def _finite_diff(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        f_plus, _ = fn(x + e)
        f_minus, _ = fn(x - e)
        g[k] = (f_plus - f_minus) / (2 * h)
    return g


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_vocab=6, max_n=3, allow_zeros=False)
    sol, res = _prepared(inst)
    checks = []
    if sol.h_star:
        tab = pie_coefficients(inst, sol, select_truncation(inst, sol, "inner"))
        checks.append(lambda a, t=tab: eval_inner(inst, t, a))
    if any(int(t) not in sol.h_star for t in inst.active_vocab):
        tab = pie_coefficients(inst, sol, select_truncation(inst, sol, "outer"))
        checks.append(lambda a, t=tab: eval_outer(inst, res, t, a))
    for fn in checks:
        dim = _table_dim(fn)
        x = rng.normal(scale=2.0, size=dim)
        _, grad = fn(x)
        approx = _finite_diff(fn, x)
        scale = max(1.0, float(np.abs(grad).max()))
        assert np.allclose(grad, approx, atol=2e-6 * scale), (grad, approx)


def _table_dim(fn):
    return len(fn.__defaults__[0].tokens)


def test_minimize_honors_pinned_coordinates():
    inst = ex1()
    sol, res = _prepared(inst)
    tab = pie_coefficients(inst, sol, select_truncation(inst, sol, "inner"))
    targets = inst.p.mass[list(tab.tokens)].copy()
    targets[1] = 0.0  # pretend the second token has no target mass

    obj = TruncatedObjective(tab, targets)
    pinned = np.array([False, True])
    result = minimize(obj, np.zeros(2), grad_tol=1e-10, pinned=pinned)
    assert result.alphas[1] == -40.0


def test_solve_system_converges_on_worked_example():
    inst = ex1()
    sol, res = _prepared(inst)
    inner = solve_system(inst, sol, res, "inner")
    assert inner.result.status == "converged"
    assert inner.result.grad_l1 <= 5 * inst.tau
    assert set(inner.alpha_map()) == {1, 2}
    outer = solve_system(inst, sol, res, "outer")
    assert outer.result.status == "converged"
    assert outer.result.iterations == 0  # gradient starts at zero


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_solve_system_meets_the_flag_tolerance(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_vocab=6, max_n=3)
    sol, res = _prepared(inst)
    for kind in ("inner", "outer"):
        if kind == "inner" and not sol.h_star:
            continue
        if kind == "outer" and not any(
            int(t) not in sol.h_star for t in inst.active_vocab
        ):
            continue
        out = solve_system(inst, sol, res, kind)
        assert out.result.status == "converged"
        assert out.result.grad_l1 <= 5 * inst.tau


def test_solve_system_cap_override_propagates():
    inst = ex1()
    sol, res = _prepared(inst)
    with pytest.raises(EarlyTermination):
        solve_system(inst, sol, res, "inner", cap_override=1)
