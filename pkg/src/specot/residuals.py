"""Row totals for tokens outside the optimal acceptance set.

Tokens outside H* keep only part of their target mass inside the
verification coupling; the leftover is refilled by residual resampling.
The split is not arbitrary: the row totals ``p_i`` must satisfy, for
every subset S of V minus H*,

    sum_{i in S} p_i  <=  sum_{i in S} p(i) + psi(V - S)

with equality when S is all of V minus H*.  That system is a polymatroid,
so a greedy sweep in increasing q/p order is exact: each token receives
``p(i)`` plus the drop in a running minimum of prefix psi values.  One
pass over the ratio-sorted order prices every token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dist import ProblemInstance
from .subset import SubsetSolution, _prefix_psi


@dataclass(frozen=True)
class OuterResiduals:
    """Per-token row totals and leftovers.

    ``p_lower[i]`` is the mass of token i routed through the coupling and
    ``residual[i] = p(i) - p_lower[i]`` the part refilled by resampling.
    Tokens in H* route everything (residual 0); tokens the drafter can
    never propose route nothing (``p_lower`` 0).  ``residual_total`` is
    ``1 - alpha_star``.
    """

    p_lower: np.ndarray
    residual: np.ndarray
    residual_total: float


@dataclass(frozen=True)
class FeasibilityResult:
    ok: bool
    violating_subset: frozenset[int] | None = None
    worst_slack: float = math.inf

    def __bool__(self) -> bool:
        return self.ok


def solve_outer_residuals(
    instance: ProblemInstance, subset_solution: SubsetSolution
) -> OuterResiduals:
    """Greedy polymatroid sweep over the ratio-sorted order.

    With ``prefix[L]`` the psi value of the first L sorted tokens and
    ``M[L]`` the minimum of ``prefix`` from L onward, token w_j (the j-th
    token after H* in the sort) gets

        p_lower[w_j] = p(w_j) + M[h+j-1] - M[h+j],   h = |H*|.

    ``M[h]`` is psi(H*) itself, and the differences telescope so the
    totals meet the binding equality exactly.
    """
    order = subset_solution.sorted_order
    h = subset_solution.h_star_size
    p = instance.p.mass
    p_lower = np.zeros(instance.full_vocab_size)
    if h:
        hs = list(subset_solution.h_star)
        p_lower[hs] = p[hs]
    prefix = _prefix_psi(instance, order)
    # suffix minima of prefix psi, from position h to the end
    m = np.empty(len(order) + 1)
    m[-1] = prefix[-1]
    for ell in range(len(order) - 1, h - 1, -1):
        m[ell] = min(prefix[ell], m[ell + 1])
    for j, tok in enumerate(order[h:], start=1):
        val = float(p[tok]) + float(m[h + j - 1]) - float(m[h + j])
        if val < 0.0:
            if val < -1e-12:
                raise AssertionError(f"greedy produced p_lower {val} < -1e-12")
            val = 0.0
        if val > float(p[tok]):
            # suffix minima are monotone, so overshoot can only be float dust
            val = float(p[tok])
        p_lower[tok] = val
    residual = np.clip(instance.p.mass - p_lower, 0.0, None)
    if h:
        residual[list(subset_solution.h_star)] = 0.0
    total = float(math.fsum(residual.tolist()))
    return OuterResiduals(
        p_lower=p_lower, residual=residual, residual_total=total
    )


def check_outer_feasibility(
    instance: ProblemInstance,
    subset_solution: SubsetSolution,
    residuals: OuterResiduals,
    rng: np.random.Generator | None = None,
    samples: int = 2000,
    tol: float = 1e-10,
) -> FeasibilityResult:
    """Verify the subset constraints and the binding equality.

    Checks ``sum_S p_lower <= sum_S p + psi(V - S)`` for every subset S of
    the tokens outside H* (exhaustively up to 12 such tokens, a random
    sample beyond that) and the equality at S = V - H*.  Truthy result on
    success; on failure the result carries the violating subset.
    """
    outside = [
        int(i)
        for i in range(instance.full_vocab_size)
        if i not in subset_solution.h_star
    ]
    p = instance.p.mass
    q = instance.q.mass
    n = instance.n
    pl = residuals.p_lower

    def slack(tokens: list[int]) -> float:
        # psi(V - S) = 1 - p(S) - (1 - q(S))^n since p and q are full totals
        p_s = math.fsum(float(p[i]) for i in tokens)
        q_s = math.fsum(float(q[i]) for i in tokens)
        lhs = math.fsum(float(pl[i]) for i in tokens)
        return p_s + (1.0 - p_s - (1.0 - q_s) ** n) - lhs

    worst = math.inf
    worst_set: frozenset[int] | None = None

    if len(outside) <= 12:
        subsets = range(1, 1 << len(outside))
        for bits in subsets:
            sel = [outside[b] for b in range(len(outside)) if bits >> b & 1]
            s = slack(sel)
            if s < worst:
                worst, worst_set = s, frozenset(sel)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        for _ in range(samples):
            mask = rng.random(len(outside)) < rng.random()
            if not mask.any():
                continue
            sel = [outside[b] for b in np.flatnonzero(mask)]
            s = slack(sel)
            if s < worst:
                worst, worst_set = s, frozenset(sel)

    if worst < -tol:
        return FeasibilityResult(False, worst_set, worst)

    gap = abs(slack(outside))
    if gap > tol:
        return FeasibilityResult(False, frozenset(outside), -gap)
    return FeasibilityResult(True, None, worst)
