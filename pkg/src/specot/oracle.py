"""Brute-force references for everything the fast paths compute.

Exponential-cost validators for toy instances: subset enumeration for
the optimal acceptance rate, a simplex reference for the relaxed
coupling, a marginal checker for plans, and the conditional
acceptance-distribution decomposition.  Nothing here shares code with
the solvers it validates; compensated summation keeps the comparisons
honest at 1e-12 tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .dist import ProblemInstance, enumerate_multisets, multiset_mass
from .flow import SparsePlan

_ENUM_LIMIT = 20


def brute_force_alpha(instance: ProblemInstance) -> tuple[float, frozenset[int]]:
    """Optimal acceptance by enumerating every subset of the active vocab.

    Returns ``(alpha, best_set)`` where ``best_set`` is the minimiser of
    ``sum_H p - (sum_H q)^n``; the smallest such set (then lexicographic)
    wins ties.  Cost 2^V, guarded at 20 active tokens.
    """
    active = [int(t) for t in instance.active_vocab]
    if len(active) > _ENUM_LIMIT:
        raise ValueError(f"{len(active)} active tokens is too many to enumerate")
    p = instance.p.mass
    q = instance.q.mass
    n = instance.n
    best_val = 0.0
    best_set: tuple[int, ...] = ()
    for size in range(1, len(active) + 1):
        for combo in combinations(active, size):
            val = math.fsum(float(p[i]) for i in combo) - math.fsum(
                float(q[i]) for i in combo
            ) ** n
            if val < best_val:
                best_val = val
                best_set = combo
    return 1.0 + best_val, frozenset(best_set)


def lp_reference(instance: ProblemInstance) -> tuple[float, SparsePlan]:
    """Relaxed-coupling optimum via an off-the-shelf simplex solver.

    Independent of the max-flow route: variables are the (token, draft
    multiset) cells with the token inside the multiset, rows and columns
    are inequality-bounded, and the objective is total retained mass.
    Toy scale only.
    """
    from scipy.optimize import linprog
    from scipy.sparse import lil_matrix

    active = [int(t) for t in instance.active_vocab]
    if len(active) > _ENUM_LIMIT:
        raise ValueError("instance too large for the simplex reference")
    groups = enumerate_multisets(active, instance.n)
    cells: list[tuple[int, tuple[int, ...]]] = []
    for g in groups:
        for tok in sorted(set(g)):
            cells.append((tok, g))
    row_of = {tok: r for r, tok in enumerate(active)}
    col_of = {g: c for c, g in enumerate(groups)}
    a = lil_matrix((len(active) + len(groups), len(cells)))
    b = np.concatenate(
        [
            instance.p.mass[active],
            np.asarray([multiset_mass(instance.q, g) for g in groups]),
        ]
    )
    for j, (tok, g) in enumerate(cells):
        a[row_of[tok], j] = 1.0
        a[len(active) + col_of[g], j] = 1.0
    res = linprog(
        c=-np.ones(len(cells)),
        A_ub=a.tocsr(),
        b_ub=b,
        bounds=(0.0, None),
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"simplex reference failed: {res.message}")
    entries = {
        cells[j]: float(res.x[j]) for j in range(len(cells)) if res.x[j] > 1e-15
    }
    return -float(res.fun), SparsePlan(entries)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    objective: float
    max_row_violation: float
    max_col_violation: float
    row_l1: float
    support_ok: bool
    mode: str


def validate_plan(
    instance: ProblemInstance,
    plan: SparsePlan,
    mode: str = "relaxed",
    tol: float = 1e-9,
) -> ValidationReport:
    """Check a plan's marginals against the instance.

    ``relaxed`` mode enforces row sums <= p(i), column sums <= draft
    mass, and support inside the tuple.  ``otlp`` mode enforces equality
    on both marginals and additionally admits resampling rows: mass at a
    token outside its tuple is legal only when the token lies outside
    the optimal set and the tuple entirely inside it.
    """
    if mode not in ("relaxed", "otlp"):
        raise ValueError(f"unknown mode {mode!r}")
    p = instance.p.mass
    rows: dict[int, list[float]] = {}
    cols: dict[tuple[int, ...], list[float]] = {}
    support_ok = True
    h_star: frozenset[int] | None = None
    if mode == "otlp":
        _, h_star = brute_force_alpha(instance)
    for (tok, g), v in plan.entries.items():
        if v < -1e-15:
            support_ok = False
        rows.setdefault(tok, []).append(v)
        cols.setdefault(g, []).append(v)
        if tok not in g and v > 1e-15:
            if mode == "relaxed":
                support_ok = False
            else:
                on_resample_row = tok not in h_star and all(t in h_star for t in g)
                if not on_resample_row:
                    support_ok = False

    groups = enumerate_multisets([int(t) for t in instance.active_vocab], instance.n)
    known = set(groups)
    max_col = 0.0
    for g in groups:
        mass = multiset_mass(instance.q, g)
        got = math.fsum(cols.get(g, [0.0]))
        viol = abs(got - mass) if mode == "otlp" else max(got - mass, 0.0)
        max_col = max(max_col, viol)
    for g, vals in cols.items():
        if g not in known:
            max_col = max(max_col, math.fsum(vals))  # mass on an impossible tuple

    max_row = 0.0
    row_l1_terms = []
    for tok in range(instance.full_vocab_size):
        got = math.fsum(rows.get(tok, [0.0]))
        gap = got - float(p[tok])
        viol = abs(gap) if mode == "otlp" else max(gap, 0.0)
        row_l1_terms.append(abs(gap))
        max_row = max(max_row, viol)

    objective = plan.acceptance()
    ok = support_ok and max_row <= tol and max_col <= tol
    return ValidationReport(
        ok=ok,
        objective=objective,
        max_row_violation=max_row,
        max_col_violation=max_col,
        row_l1=float(math.fsum(row_l1_terms)),
        support_ok=support_ok,
        mode=mode,
    )


def canonical_beta(
    instance: ProblemInstance, plan: SparsePlan
) -> tuple[float, dict[tuple[int, tuple[int, ...]], float]]:
    """Acceptance-rule decomposition of a relaxed solution.

    Normalises each column of the plan into a conditional distribution
    beta(token | tuple) over the tuple's members (uniform where the
    column holds no mass) and evaluates the acceptance functional

        sum_i min(p(i), sum_tuples beta(i | tuple) * mass(tuple)).

    For an optimal plan this recovers the optimal acceptance rate.
    """
    groups = enumerate_multisets([int(t) for t in instance.active_vocab], instance.n)
    cols: dict[tuple[int, ...], list[tuple[int, float]]] = {}
    for (tok, g), v in plan.entries.items():
        if tok in g:
            cols.setdefault(g, []).append((tok, v))
    beta: dict[tuple[int, tuple[int, ...]], float] = {}
    weighted: dict[int, list[float]] = {}
    for g in groups:
        members = sorted(set(g))
        entries = cols.get(g, [])
        total = math.fsum(v for _, v in entries)
        if total <= 1e-15:
            share = 1.0 / len(members)
            for tok in members:
                beta[(tok, g)] = share
        else:
            for tok, v in entries:
                beta[(tok, g)] = beta.get((tok, g), 0.0) + v / total
        mass = multiset_mass(instance.q, g)
        for tok in members:
            b = beta.get((tok, g), 0.0)
            if b:
                weighted.setdefault(tok, []).append(b * mass)
    value = math.fsum(
        min(float(instance.p.mass[tok]), math.fsum(weighted.get(tok, [0.0])))
        for tok in range(instance.full_vocab_size)
    )
    return value, beta
