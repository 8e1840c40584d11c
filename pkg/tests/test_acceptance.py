"""Release gate: ten checks, one verdict line apiece.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as
they print; without ``-s`` they surface in the captured-output section
of any failure.
"""

import math
import statistics
import time

import numpy as np
import pytest

from specot import (
    ProblemInstance,
    SparsePlan,
    SyntheticModelPair,
    achieved_acceptance,
    brute_force_alpha,
    build_inner_network,
    build_outer_network,
    canonical_beta,
    check_outer_feasibility,
    complete_plan,
    decode_distribution,
    distribution_l1,
    full_plan_global,
    multiset_mass,
    ot_slice,
    precompute,
    run_single_step,
    solve_h_star,
    solve_outer_residuals,
    solve_relaxed_exact,
    target_prefix_distribution,
    validate_plan,
    zipf_instance,
)
from specot.convex import (
    eval_inner,
    eval_outer,
    pie_coefficients,
    select_truncation,
    solve_system,
)
from specot.subset import alpha_single_draft, psi

from instgen import ex1, random_instance


def _verdict(num: int, ok: bool, detail: str) -> None:
    print(f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num}: {detail}"


def _pool(seed: int, count: int, max_vocab: int, max_n: int):
    rng = np.random.default_rng(seed)
    return [
        random_instance(rng, max_vocab=max_vocab, max_n=max_n)
        for _ in range(count)
    ]


@pytest.fixture(scope="module")
def pool_small():
    # 500 draws, vocab <= 8, drafts 1..4
    return _pool(101, 500, 8, 4)


@pytest.fixture(scope="module")
def pool_flow():
    # 200 draws, vocab <= 6, drafts <= 3
    return _pool(202, 200, 6, 3)


@pytest.fixture(scope="module")
def pool_global():
    return _pool(303, 100, 6, 3)


def test_criterion_01_prefix_alpha_is_oracle_exact(pool_small):
    start = time.perf_counter()
    worst = 0.0
    worst_single = 0.0
    for inst in pool_small:
        ref, _ = brute_force_alpha(inst)
        sol = solve_h_star(inst)
        worst = max(worst, abs(sol.alpha_star - ref))
        if inst.n == 1:
            tv = alpha_single_draft(inst.p.mass, inst.q.mass)
            worst_single = max(worst_single, abs(sol.alpha_star - tv))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-12 and worst_single < 1e-12 and elapsed < 10.0
    _verdict(
        1,
        ok,
        f"prefix vs brute force on 500 instances: max gap {worst:.2e}, "
        f"single-draft gap {worst_single:.2e}, {elapsed:.1f}s",
    )


def test_criterion_02_flow_value_and_completed_plan(pool_flow):
    start = time.perf_counter()
    worst_gap = 0.0
    worst_row = 0.0
    all_valid = True
    for inst in pool_flow:
        ref, _ = brute_force_alpha(inst)
        plan = solve_relaxed_exact(inst)
        worst_gap = max(worst_gap, abs(plan.objective - ref))
        report = validate_plan(inst, complete_plan(inst, plan), mode="otlp")
        all_valid = all_valid and report.ok
        worst_row = max(worst_row, report.row_l1)
        worst_gap = max(worst_gap, abs(report.objective - ref))
    elapsed = time.perf_counter() - start
    ok = worst_gap < 1e-9 and worst_row < 1e-9 and all_valid and elapsed < 60.0
    _verdict(
        2,
        ok,
        f"max-flow vs oracle on 200 instances: value gap {worst_gap:.2e}, "
        f"completed-plan row L1 {worst_row:.2e}, valid={all_valid}, {elapsed:.1f}s",
    )


def test_criterion_03_split_systems_saturate(pool_flow):
    worst_outer = 0.0
    worst_inner = 0.0
    worst_combined = 0.0
    all_valid = True
    for inst in pool_flow:
        sol = solve_h_star(inst)
        res = solve_outer_residuals(inst, sol)
        entries = {}
        if any(int(t) not in sol.h_star for t in inst.active_vocab):
            value, plan = build_outer_network(inst, sol, res).solve()
            target = math.fsum(
                float(res.p_lower[i])
                for i in range(inst.full_vocab_size)
                if i not in sol.h_star
            )
            worst_outer = max(worst_outer, abs(value - target))
            entries.update(plan.entries)
        if sol.h_star:
            value, plan = build_inner_network(inst, sol).solve()
            target = math.fsum(float(inst.p.mass[i]) for i in sol.h_star)
            worst_inner = max(worst_inner, abs(value - target))
            entries.update(plan.entries)
        combined = complete_plan(inst, SparsePlan(entries))
        report = validate_plan(inst, combined, mode="otlp")
        all_valid = all_valid and report.ok
        ref, _ = brute_force_alpha(inst)
        worst_combined = max(worst_combined, abs(report.objective - ref))
    ok = (
        worst_outer < 1e-9
        and worst_inner < 1e-9
        and worst_combined < 1e-9
        and all_valid
    )
    _verdict(
        3,
        ok,
        f"outer saturation gap {worst_outer:.2e}, inner {worst_inner:.2e}, "
        f"combined-plan objective gap {worst_combined:.2e}, valid={all_valid}",
    )


def test_criterion_04_residual_feasibility(pool_small):
    failures = 0
    worst = math.inf
    for inst in pool_small:
        sol = solve_h_star(inst)
        res = solve_outer_residuals(inst, sol)
        verdict = check_outer_feasibility(inst, sol, res, tol=1e-10)
        if not verdict:
            failures += 1
        else:
            worst = min(worst, verdict.worst_slack)
    ok = failures == 0
    _verdict(
        4,
        ok,
        f"subset feasibility on 500 instances: {failures} violations, "
        f"tightest slack {worst:.2e}",
    )


def test_criterion_05_global_resolution_bounds(pool_global):
    start = time.perf_counter()
    taus = (1e-2, 1e-3, 1e-4)
    worst_l1 = 0.0
    worst_drop = -math.inf
    worst_col = 0.0
    failures = 0
    for base in pool_global:
        ref, _ = brute_force_alpha(base)
        for tau in taus:
            inst = ProblemInstance(p=base.p, q=base.q, n=base.n, tau=tau)
            pre = precompute(inst)
            if pre.failed:
                failures += 1
                continue
            plan = full_plan_global(inst, pre)
            rows = plan.row_sums(inst.full_vocab_size)
            l1 = math.fsum(
                abs(rows[i] - float(inst.p.mass[i]))
                for i in range(inst.full_vocab_size)
            )
            worst_l1 = max(worst_l1, l1 / (15 * tau))
            worst_drop = max(worst_drop, (ref - plan.acceptance()) / (10 * tau))
            cols = plan.col_sums()
            for g, mass in cols.items():
                worst_col = max(
                    worst_col, abs(mass - multiset_mass(inst.q, g))
                )
    elapsed = time.perf_counter() - start
    ok = (
        failures == 0
        and worst_l1 <= 1.0
        and worst_drop <= 1.0
        and worst_col < 1e-12
        and elapsed < 120.0
    )
    _verdict(
        5,
        ok,
        f"100 instances x tau {taus}: row L1 at {worst_l1:.3f} of budget, "
        f"acceptance drop at {worst_drop:.3f} of budget, col err {worst_col:.2e}, "
        f"{failures} failures, {elapsed:.1f}s",
    )


def test_criterion_06_gradients_and_convergence():
    rng = np.random.default_rng(404)
    checked = {"outer": 0, "inner": 0}
    worst_rel = 0.0
    worst_converged_grad = 0.0
    converged = 0
    total = 0
    while min(checked.values()) < 50:
        inst = random_instance(rng, max_vocab=6, max_n=3)
        sol = solve_h_star(inst)
        res = solve_outer_residuals(inst, sol)
        sides = []
        if sol.h_star:
            sides.append("inner")
        if any(int(t) not in sol.h_star for t in inst.active_vocab):
            sides.append("outer")
        for kind in sides:
            tab = pie_coefficients(inst, sol, select_truncation(inst, sol, kind))
            if not tab.tokens:
                continue
            fn = (
                (lambda a, t=tab: eval_inner(inst, t, a))
                if kind == "inner"
                else (lambda a, t=tab: eval_outer(inst, res, t, a))
            )
            x = rng.normal(scale=2.0, size=len(tab.tokens))
            _, grad = fn(x)
            fd = np.zeros_like(x)
            h = 1e-6
            for k in range(x.size):
                e = np.zeros_like(x)
                e[k] = h
                fd[k] = (fn(x + e)[0] - fn(x - e)[0]) / (2 * h)
            rel = float(
                np.abs(grad - fd).max() / max(1.0, float(np.abs(grad).max()))
            )
            worst_rel = max(worst_rel, rel)
            checked[kind] += 1
            out = solve_system(inst, sol, res, kind)
            total += 1
            if out.result.status == "converged":
                converged += 1
                worst_converged_grad = max(
                    worst_converged_grad, out.result.grad_l1 / (5 * inst.tau)
                )
    ok = worst_rel < 1e-5 and worst_converged_grad <= 1.0 and converged == total
    _verdict(
        6,
        ok,
        f"gradient rel err {worst_rel:.2e} over {checked['outer']}+{checked['inner']} "
        f"points, converged grad at {worst_converged_grad:.3f} of 5*tau "
        f"({converged}/{total} converged)",
    )


def test_criterion_07_statistical_fidelity():
    inst = ex1(tau=1e-4)
    n_samples = 100_000
    report = run_single_step(inst, n_samples, seed=777)
    se = math.sqrt(0.86 * 0.14 / n_samples)
    acc_gap = abs(report.empirical_acceptance - 0.86)
    l1_budget = 15 * inst.tau + 4 * math.sqrt(3 / n_samples)
    ok = acc_gap <= 3 * se and report.empirical_token_l1 <= l1_budget
    _verdict(
        7,
        ok,
        f"N=1e5: acceptance {report.empirical_acceptance:.4f} "
        f"(|gap| {acc_gap:.4f} vs 3se {3 * se:.4f}), "
        f"token L1 {report.empirical_token_l1:.4f} vs {l1_budget:.4f}",
    )


def test_criterion_08_multi_step_error_scaling():
    models = SyntheticModelPair.random(3, seed=88)
    length = 2
    tau = 1e-3
    target = target_prefix_distribution(models, length)
    approx = decode_distribution(
        models, path_len=2, num_paths=2, tau=tau, length=length
    )
    l1_approx = distribution_l1(approx, target)
    exact = decode_distribution(
        models, path_len=2, num_paths=2, tau=tau, length=length, exact=True
    )
    l1_exact = distribution_l1(exact, target)
    ok = l1_approx <= 15 * 2 * tau and l1_exact <= 1e-6
    _verdict(
        8,
        ok,
        f"V=3 L=2 K=2 joint L1: approximate {l1_approx:.2e} "
        f"(budget {15 * 2 * tau:.0e}), exact {l1_exact:.2e} (budget 1e-06)",
    )


def test_criterion_09_performance_report():
    # soft target: never gates the build, numbers are for the record
    k, n, tau = 1000, 2, 1e-3
    totals = []
    slices = []
    successes = 0
    trials = 11
    for i in range(trials):
        inst = zipf_instance(k, n, tau, seed=900 + i)
        rng = np.random.default_rng(i)
        omega = tuple(
            int(t) for t in rng.choice(inst.full_vocab_size, size=n, p=inst.q.mass)
        )
        t0 = time.perf_counter()
        pre = precompute(inst)
        t1 = time.perf_counter()
        ot_slice(inst, pre, omega)
        t2 = time.perf_counter()
        totals.append((t2 - t0) * 1e3)
        slices.append((t2 - t1) * 1e3)
        if not pre.failed:
            successes += 1
    med_total = statistics.median(totals)
    med_slice = statistics.median(slices)
    under = med_total < 100.0
    # heavy-tailed drafters overflow the conservative default caps at
    # this scale; one uncapped solve shows the full-size cost for scale
    inst = zipf_instance(k, n, tau, seed=900)
    t0 = time.perf_counter()
    wide = precompute(inst, cap_override=1200)
    uncapped_ms = (time.perf_counter() - t0) * 1e3
    _verdict(
        9,
        True,
        f"soft, non-gating: zipf k=1000 n=2 median solve+slice {med_total:.1f}ms "
        f"(slice alone {med_slice:.3f}ms, target 100ms {'met' if under else 'missed'}), "
        f"success {successes}/{trials} at default truncation caps; "
        f"uncapped solve {'ok' if not wide.failed else 'failed'} "
        f"in {uncapped_ms:.0f}ms",
    )


def test_criterion_10_canonical_decomposition(pool_flow):
    worst = 0.0
    for inst in pool_flow:
        ref, _ = brute_force_alpha(inst)
        value, _ = canonical_beta(inst, solve_relaxed_exact(inst))
        worst = max(worst, abs(value - ref))
    ok = worst < 1e-9
    _verdict(
        10,
        ok,
        f"acceptance-rule decomposition on 200 instances: max objective gap {worst:.2e}",
    )
