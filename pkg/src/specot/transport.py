"""Verification slices: the per-tuple acceptance distributions.

A drafted tuple omega is verified by sampling one token from the
conditional coupling pi(token | omega).  This module assembles those
conditionals from the cheap precomputed pieces: the optimal set H*, the
greedy row totals, and the two truncated convex solutions.  Tuples not
fully inside H* take a softmax over their out-of-H* members; tuples
inside H* take a softmax-with-slack over their members plus one shared
resampling row that refills the target mass H* cannot cover.

Materialising every slice yields a full coupling whose draft marginals
are exact and whose target marginals are within the advertised 15*tau;
single slices are what the sampling harness consumes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import convex
from .dist import (
    ProblemInstance,
    enumerate_multisets,
    multiset_key,
    multiset_mass,
)
from .flow import SparsePlan, complete_plan, solve_relaxed_exact, solve_optimized_exact
from .residuals import OuterResiduals, solve_outer_residuals
from .subset import SubsetSolution, solve_h_star

# Below this leftover mass the resampling row is numerically meaningless;
# fold it back into the tuple instead.
RESIDUAL_FLOOR = 1e-9


@dataclass(frozen=True)
class TransportSlice:
    """One conditional acceptance distribution pi(token | omega)."""

    omega: tuple[int, ...]
    probs: dict[int, float]
    method: str
    fallback: bool = False
    meta: dict = field(default_factory=dict)

    def sample(self, u: float) -> int:
        """Inverse-CDF draw: tokens in ascending id order, u in [0, 1)."""
        acc = 0.0
        last = None
        for tok in sorted(self.probs):
            acc += self.probs[tok]
            last = tok
            if u < acc:
                return tok
        if last is None:
            raise ValueError("empty slice")
        return last  # u landed in the float dust above the last CDF step


@dataclass(frozen=True)
class Precomputation:
    """Everything slice assembly needs, solved once per (p, q, n)."""

    subset_solution: SubsetSolution
    residuals: OuterResiduals
    inner: convex.SystemSolution | None
    outer: convex.SystemSolution | None
    tau: float
    failure_reason: str | None = None
    solve_seconds: float = 0.0

    @property
    def failed(self) -> bool:
        return self.failure_reason is not None

    @property
    def alpha_star(self) -> float:
        return self.subset_solution.alpha_star


def precompute(
    instance: ProblemInstance,
    tau: float | None = None,
    cap_override: int | None = None,
    max_iter: int = convex.MAX_ITER,
) -> Precomputation:
    """Run the whole approximate pipeline for one instance.

    On EarlyTermination the result is marked failed and slices fall back
    to plain target sampling rather than raising mid-decode.
    """
    tau = instance.tau if tau is None else float(tau)
    start = time.perf_counter()
    subset_solution = solve_h_star(instance)
    residuals = solve_outer_residuals(instance, subset_solution)
    inner = outer = None
    failure = None
    try:
        if subset_solution.h_star:
            inner = convex.solve_system(
                instance, subset_solution, residuals, "inner",
                tau=tau, cap_override=cap_override, max_iter=max_iter,
            )
        if any(
            int(t) not in subset_solution.h_star for t in instance.active_vocab
        ):
            outer = convex.solve_system(
                instance, subset_solution, residuals, "outer",
                tau=tau, cap_override=cap_override, max_iter=max_iter,
            )
    except convex.EarlyTermination as stop:
        failure = stop.reason
        inner = outer = None
    return Precomputation(
        subset_solution=subset_solution,
        residuals=residuals,
        inner=inner,
        outer=outer,
        tau=tau,
        failure_reason=failure,
        solve_seconds=time.perf_counter() - start,
    )


def _normalised(probs: dict[int, float]) -> dict[int, float]:
    total = math.fsum(probs.values())
    return {tok: val / total for tok, val in sorted(probs.items()) if val > 0.0}


def _fallback_slice(instance: ProblemInstance, omega: tuple[int, ...], reason: str) -> TransportSlice:
    probs = {
        int(i): float(instance.p.mass[i])
        for i in np.flatnonzero(instance.p.mass > 0.0)
    }
    return TransportSlice(
        omega=omega,
        probs=_normalised(probs),
        method="fallback_p",
        fallback=True,
        meta={"reason": reason},
    )


def ot_slice(
    instance: ProblemInstance, pre: Precomputation, omega
) -> TransportSlice:
    """Assemble pi(. | omega) from the precomputed solutions.

    Tokens absent from a truncation keep their initial weight alpha = 0;
    the accuracy certificate already charges the tuples that touch them.
    """
    omega = tuple(int(t) for t in omega)
    if len(omega) != instance.n:
        raise ValueError(f"omega must have {instance.n} entries")
    if any(t < 0 or t >= instance.full_vocab_size for t in omega):
        raise ValueError("omega token out of range")
    if pre.failed:
        return _fallback_slice(instance, omega, pre.failure_reason or "failed")
    h = pre.subset_solution.h_star
    members = sorted(set(omega))
    if all(t in h for t in members):
        return _inner_slice(instance, pre, omega, members)
    return _outer_slice(instance, pre, omega, members)


def _outer_slice(
    instance: ProblemInstance,
    pre: Precomputation,
    omega: tuple[int, ...],
    members: list[int],
) -> TransportSlice:
    h = pre.subset_solution.h_star
    alpha = pre.outer.alpha_map() if pre.outer is not None else {}
    outside = [t for t in members if t not in h]
    weights = np.asarray([alpha.get(t, 0.0) for t in outside])
    weights = np.exp(weights - weights.max())
    weights /= weights.sum()
    probs = {tok: float(w) for tok, w in zip(outside, weights)}
    meta = {"route": "outer", "tau": pre.tau}
    if pre.outer is not None:
        meta["grad_l1"] = pre.outer.result.grad_l1
        meta["tunable_error"] = pre.outer.truncation.tunable_error
    return TransportSlice(
        omega=omega, probs=_normalised(probs), method="global", meta=meta
    )


def _inner_slice(
    instance: ProblemInstance,
    pre: Precomputation,
    omega: tuple[int, ...],
    members: list[int],
) -> TransportSlice:
    alpha = pre.inner.alpha_map() if pre.inner is not None else {}
    avals = np.asarray([alpha.get(t, 0.0) for t in members])
    shift = max(0.0, float(avals.max()))
    weights = np.exp(avals - shift)
    slack = math.exp(-shift)
    denom = slack + float(weights.sum())
    probs = {tok: float(w) / denom for tok, w in zip(members, weights)}
    leftover = slack / denom
    res_total = pre.residuals.residual_total
    meta = {"route": "inner", "tau": pre.tau}
    if pre.inner is not None:
        meta["grad_l1"] = pre.inner.result.grad_l1
        meta["tunable_error"] = pre.inner.truncation.tunable_error
    if res_total > RESIDUAL_FLOOR:
        res = pre.residuals.residual
        for tok in np.flatnonzero(res > 0.0):
            probs[int(tok)] = probs.get(int(tok), 0.0) + leftover * float(
                res[tok]
            ) / res_total
    else:
        # acceptance is essentially 1: no meaningful leftover to resample,
        # so the normalisation below folds the dust back into the tuple
        meta["residual_skipped"] = True
    return TransportSlice(
        omega=omega, probs=_normalised(probs), method="global", meta=meta
    )


def full_plan_global(
    instance: ProblemInstance, pre: Precomputation, max_groups: int = 200_000
) -> SparsePlan:
    """Materialise the approximate coupling over every draft multiset.

    Column sums are exact by construction; row sums carry the certified
    deviation.  Enumeration cost is combinatorial, so toy scale only.
    """
    if pre.failed:
        raise convex.EarlyTermination(
            pre.failure_reason or "numerical", "cannot materialise a failed solve"
        )
    active = [int(t) for t in instance.active_vocab]
    groups = enumerate_multisets(active, instance.n)
    if len(groups) > max_groups:
        raise ValueError(f"{len(groups)} draft groups exceed the toy-scale limit")
    entries: dict[tuple[int, tuple[int, ...]], float] = {}
    for g in groups:
        mass = multiset_mass(instance.q, g)
        if mass <= 0.0:
            continue
        sl = ot_slice(instance, pre, g)
        for tok, val in sl.probs.items():
            entries[(tok, g)] = val * mass
    return SparsePlan(entries)


def achieved_acceptance(instance: ProblemInstance, pre: Precomputation) -> float:
    """Acceptance probability of the assembled coupling, without enumeration.

    Slices over tuples touching tokens outside H* always accept, so only
    the inner leftovers subtract; those are summed through the grouped
    coefficient table.  Tuples inside H* that escaped the truncation are
    not observable here, so the result may overshoot the true acceptance
    by at most the inner truncation error (itself at most tau).  Returns
    NaN for a failed precomputation.
    """
    if pre.failed:
        return float("nan")
    h = pre.subset_solution.h_star
    if not h or pre.inner is None:
        return 1.0
    alpha = pre.inner.alpha_map()
    leftovers = []
    table = pre.inner.table
    for sub, coeff in zip(table.subsets, table.coeffs):
        denom = 1.0 + math.fsum(math.exp(alpha[t]) for t in sub)
        leftovers.append(float(coeff) / denom)
    return 1.0 - math.fsum(leftovers)


@dataclass(frozen=True)
class VerifyOutcome:
    token: int
    accepted: bool
    slice: TransportSlice


def verify_token(
    instance: ProblemInstance, pre: Precomputation, omega, u: float
) -> VerifyOutcome:
    """Verify one drafted tuple with one uniform draw u in [0, 1)."""
    sl = ot_slice(instance, pre, omega)
    token = sl.sample(u)
    return VerifyOutcome(token=token, accepted=token in set(sl.omega), slice=sl)


# ---------------------------------------------------------------------------
# exact (max-flow) slices, for the reference pipelines

@dataclass(frozen=True)
class ExactPrecomputation:
    """Solved exact plans, reusable across slices of one instance."""

    optimized: bool
    subset_solution: SubsetSolution
    residuals: OuterResiduals
    full_completed: SparsePlan | None = None
    outer_plan: SparsePlan | None = None
    inner_plan: SparsePlan | None = None


def exact_precompute(
    instance: ProblemInstance, optimized: bool = False
) -> ExactPrecomputation:
    subset_solution = solve_h_star(instance)
    residuals = solve_outer_residuals(instance, subset_solution)
    if not optimized:
        plan = complete_plan(instance, solve_relaxed_exact(instance))
        return ExactPrecomputation(
            optimized=False,
            subset_solution=subset_solution,
            residuals=residuals,
            full_completed=plan,
        )
    h = subset_solution.h_star
    outer_plan = inner_plan = None
    if any(int(t) not in h for t in instance.active_vocab):
        probe = next(int(t) for t in instance.active_vocab if int(t) not in h)
        outer_plan = solve_optimized_exact(
            instance, subset_solution, residuals, (probe,) * instance.n
        )
    if h:
        probe = min(h)
        inner_plan = solve_optimized_exact(
            instance, subset_solution, residuals, (probe,) * instance.n
        )
    return ExactPrecomputation(
        optimized=True,
        subset_solution=subset_solution,
        residuals=residuals,
        outer_plan=outer_plan,
        inner_plan=inner_plan,
    )


def exact_slice(
    instance: ProblemInstance,
    omega,
    pre: ExactPrecomputation | None = None,
    optimized: bool = False,
) -> TransportSlice:
    """pi(. | omega) from the exact max-flow solutions.

    The full route reads a column of the completed coupling; the
    optimized route solves only the half the tuple touches and adds the
    resampling row analytically.
    """
    omega = tuple(int(t) for t in omega)
    if pre is None:
        pre = exact_precompute(instance, optimized=optimized)
    key = multiset_key(omega)
    mass = multiset_mass(instance.q, key)
    if mass <= 0.0:
        return _fallback_slice(instance, omega, "zero-probability tuple")
    h = pre.subset_solution.h_star
    if not pre.optimized:
        plan = pre.full_completed
        probs = {
            tok: val / mass
            for (tok, g), val in plan.entries.items()
            if g == key and val > 0.0
        }
        return TransportSlice(
            omega=omega, probs=_normalised(probs), method="maxflow"
        )
    inside = all(t in h for t in key)
    plan = pre.inner_plan if inside else pre.outer_plan
    col = {
        tok: val for (tok, g), val in plan.entries.items() if g == key and val > 0.0
    }
    if inside:
        used = math.fsum(col.values())
        leftover = max(mass - used, 0.0)
        res_total = pre.residuals.residual_total
        probs = {tok: val / mass for tok, val in col.items()}
        if leftover > 0.0 and res_total > RESIDUAL_FLOOR:
            res = pre.residuals.residual
            frac = leftover / mass
            for tok in np.flatnonzero(res > 0.0):
                probs[int(tok)] = probs.get(int(tok), 0.0) + frac * float(
                    res[tok]
                ) / res_total
    else:
        probs = {tok: val / mass for tok, val in col.items()}
    return TransportSlice(
        omega=omega, probs=_normalised(probs), method="maxflow-opt"
    )
