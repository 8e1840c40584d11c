"""Greedy residual bounds for the tokens left outside the acceptance set."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specot import (
    OuterResiduals,
    check_outer_feasibility,
    make_instance,
    solve_h_star,
    solve_outer_residuals,
)

from instgen import ex1, ex2, random_instance


def test_worked_example_residual_row():
    inst = ex1()
    sol = solve_h_star(inst)
    res = solve_outer_residuals(inst, sol)
    assert res.p_lower[0] == pytest.approx(0.36, abs=1e-12)
    assert res.residual[0] == pytest.approx(0.14, abs=1e-12)
    assert res.residual[1] == 0.0 and res.residual[2] == 0.0
    assert res.residual_total == pytest.approx(0.14, abs=1e-12)


def test_four_token_example_residual_row():
    inst = ex2()
    sol = solve_h_star(inst)
    res = solve_outer_residuals(inst, sol)
    # p(0) + psi(H*) = 0.4 - 0.129
    assert res.p_lower[0] == pytest.approx(0.271, abs=1e-12)
    assert res.residual_total == pytest.approx(0.129, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=120, deadline=None)
def test_outer_rows_telescope_to_alpha(seed):
    """p(H*) plus the outer equality targets must rebuild alpha*."""
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    sol = solve_h_star(inst)
    res = solve_outer_residuals(inst, sol)
    p_h = math.fsum(float(inst.p.mass[i]) for i in sol.h_star)
    outer = math.fsum(
        float(res.p_lower[i])
        for i in range(inst.full_vocab_size)
        if i not in sol.h_star
    )
    assert p_h + outer == pytest.approx(sol.alpha_star, abs=1e-10)
    assert res.residual_total == pytest.approx(1.0 - sol.alpha_star, abs=1e-10)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=120, deadline=None)
def test_outer_rows_stay_within_target_mass(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    sol = solve_h_star(inst)
    res = solve_outer_residuals(inst, sol)
    for i in range(inst.full_vocab_size):
        if i in sol.h_star:
            assert res.p_lower[i] == float(inst.p.mass[i])
            assert res.residual[i] == 0.0
        else:
            assert 0.0 <= res.p_lower[i] <= float(inst.p.mass[i]) + 1e-12
            assert res.residual[i] == pytest.approx(
                float(inst.p.mass[i]) - res.p_lower[i], abs=1e-12
            )


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_feasibility_holds_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    sol = solve_h_star(inst)
    res = solve_outer_residuals(inst, sol)
    verdict = check_outer_feasibility(inst, sol, res)
    assert verdict, (verdict.violating_subset, verdict.worst_slack)
    assert verdict.worst_slack >= -1e-10


def test_feasibility_catches_an_inflated_row():
    """The full outside set binds with equality, so any bump must violate."""
    inst = ex1()
    sol = solve_h_star(inst)
    res = solve_outer_residuals(inst, sol)
    bumped = res.p_lower.copy()
    bumped[0] += 1e-6
    fake = OuterResiduals(
        p_lower=bumped,
        residual=res.residual,
        residual_total=res.residual_total,
    )
    verdict = check_outer_feasibility(inst, sol, fake)
    assert not verdict
    assert verdict.violating_subset is not None


def test_feasibility_sampled_branch_runs():
    # flat target, spiky drafter: 14 tokens stay outside H*, which
    # forces the sampled subset path instead of the exhaustive one
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.full(16, 4.0))
    q = rng.dirichlet(np.full(16, 0.12))
    inst = make_instance(p, q, 2)
    sol = solve_h_star(inst)
    res = solve_outer_residuals(inst, sol)
    assert inst.full_vocab_size - len(sol.h_star) == 14
    verdict = check_outer_feasibility(inst, sol, res, samples=500)
    assert verdict


def test_empty_h_star_gives_plain_target_rows():
    inst = make_instance([0.4, 0.35, 0.25], [0.4, 0.35, 0.25], 2)
    sol = solve_h_star(inst)
    assert sol.h_star == frozenset()
    res = solve_outer_residuals(inst, sol)
    assert np.allclose(res.p_lower, inst.p.mass, atol=1e-12)
    assert res.residual_total == pytest.approx(0.0, abs=1e-12)
