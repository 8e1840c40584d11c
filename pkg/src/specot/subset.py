"""Optimal acceptance set and acceptance rate via ratio-sorted prefixes.

The best verifier accepts with probability ``alpha = 1 + min_H psi(H)``
where ``psi(H) = sum_{i in H} p(i) - (sum_{i in H} q(i))**n`` and the
minimum runs over all token subsets H.  psi is submodular, and its
minimiser is always a prefix of the tokens sorted by decreasing
``q(i)/p(i)``, which brings the search down from 2^V subsets to a single
O(V log V) sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cmp_to_key
from typing import Iterable, Sequence

import numpy as np

from .dist import ProbDist, ProblemInstance


@dataclass(frozen=True)
class SubsetSolution:
    """Output of the prefix sweep.

    ``sorted_order`` lists the active tokens by decreasing q/p ratio and
    ``h_star`` is the psi-minimising prefix of it (possibly empty).
    ``alpha_star`` is the optimal single-step acceptance probability.
    """

    h_star: frozenset[int]
    alpha_star: float
    sorted_order: tuple[int, ...]
    psi_h_star: float

    @property
    def h_star_size(self) -> int:
        return len(self.h_star)

    def h_star_mask(self, vocab_size: int) -> np.ndarray:
        mask = np.zeros(vocab_size, dtype=bool)
        if self.h_star:
            mask[list(self.h_star)] = True
        return mask


def psi(instance: ProblemInstance, tokens: Iterable[int]) -> float:
    """psi(H): target mass of H minus the chance all n drafts land in H."""
    idx = list(tokens)
    if not idx:
        return 0.0
    p_sum = math.fsum(float(instance.p.mass[i]) for i in idx)
    q_sum = math.fsum(float(instance.q.mass[i]) for i in idx)
    return p_sum - q_sum ** instance.n


def psi_independent(
    p: ProbDist | np.ndarray,
    qs: Sequence[ProbDist | np.ndarray],
    tokens: Iterable[int],
) -> float:
    """psi for drafts drawn from distinct distributions q_1..q_n.

    Only used by property tests; the solvers all assume identical drafts,
    where the product collapses to a single power.
    """
    idx = list(tokens)
    if not idx:
        return 0.0
    p_arr = p.mass if isinstance(p, ProbDist) else np.asarray(p, dtype=np.float64)
    p_sum = math.fsum(float(p_arr[i]) for i in idx)
    prod = 1.0
    for q in qs:
        q_arr = q.mass if isinstance(q, ProbDist) else np.asarray(q, dtype=np.float64)
        prod *= math.fsum(float(q_arr[i]) for i in idx)
    return p_sum - prod


def ratio_sort(instance: ProblemInstance, tokens: Iterable[int]) -> list[int]:
    """Sort ``tokens`` by decreasing q(i)/p(i), ties toward the lower id.

    Comparisons use the cross product q(i)p(j) vs q(j)p(i), so p(i)=0
    (an infinite ratio, sorted first) needs no special casing and no
    division noise enters the order.
    """
    p = instance.p.mass
    q = instance.q.mass

    def cmp(i: int, j: int) -> int:
        lhs = q[i] * p[j]
        rhs = q[j] * p[i]
        if lhs > rhs:
            return -1
        if lhs < rhs:
            return 1
        return -1 if i < j else 1

    return sorted((int(t) for t in tokens), key=cmp_to_key(cmp))


def _prefix_psi(instance: ProblemInstance, order: Sequence[int]) -> np.ndarray:
    """psi of every prefix of ``order``; entry L covers the first L tokens."""
    p = instance.p.mass
    q = instance.q.mass
    out = np.empty(len(order) + 1)
    out[0] = 0.0
    p_run = 0.0
    q_run = 0.0
    p_comp = 0.0  # Kahan carries; prefix sums must not drift over long orders
    q_comp = 0.0
    for pos, tok in enumerate(order, start=1):
        y = float(p[tok]) - p_comp
        t = p_run + y
        p_comp = (t - p_run) - y
        p_run = t
        y = float(q[tok]) - q_comp
        t = q_run + y
        q_comp = (t - q_run) - y
        q_run = t
        out[pos] = p_run - q_run ** instance.n
    return out


def solve_h_star(instance: ProblemInstance) -> SubsetSolution:
    """Find the psi-minimising subset and the optimal acceptance rate.

    Scans psi over prefixes of the ratio-sorted active tokens; the
    earliest minimising prefix wins ties, so the empty set is returned
    whenever nothing improves on psi(empty) = 0.
    """
    order = ratio_sort(instance, instance.active_vocab)
    prefix = _prefix_psi(instance, order)
    best = int(np.argmin(prefix))  # argmin takes the earliest on exact ties
    psi_star = float(prefix[best])
    return SubsetSolution(
        h_star=frozenset(order[:best]),
        alpha_star=1.0 + psi_star,
        sorted_order=tuple(order),
        psi_h_star=psi_star,
    )


def constrained_min_psi(
    instance: ProblemInstance,
    lower: Iterable[int],
    upper: Iterable[int],
) -> tuple[float, frozenset[int]]:
    """Minimise psi over sets S with lower <= S <= upper.

    The minimiser is ``lower`` joined with a ratio-sorted prefix of
    ``upper - lower``; the sweep just starts its running sums at
    ``lower`` instead of the empty set.
    """
    lo = frozenset(int(t) for t in lower)
    up = frozenset(int(t) for t in upper)
    if not lo <= up:
        raise ValueError("constraint sets must be nested: lower <= upper")
    p = instance.p.mass
    q = instance.q.mass
    free = ratio_sort(instance, up - lo)
    p_run = math.fsum(float(p[i]) for i in lo)
    q_run = math.fsum(float(q[i]) for i in lo)
    best_val = p_run - q_run ** instance.n  # psi(lower); 0 when lower is empty
    best_len = 0
    for pos, tok in enumerate(free, start=1):
        p_run += float(p[tok])
        q_run += float(q[tok])
        val = p_run - q_run ** instance.n
        if val < best_val:
            best_val = val
            best_len = pos
    return float(best_val), lo | frozenset(free[:best_len])


def alpha_single_draft(
    p: ProbDist | np.ndarray, q: ProbDist | np.ndarray
) -> float:
    """Classical n=1 acceptance rate: sum_i min(p(i), q(i))."""
    p_arr = p.mass if isinstance(p, ProbDist) else np.asarray(p, dtype=np.float64)
    q_arr = q.mass if isinstance(q, ProbDist) else np.asarray(q, dtype=np.float64)
    return float(math.fsum(np.minimum(p_arr, q_arr).tolist()))
