"""Optimal-transport acceptance rules for multi-draft speculative sampling.

Given a target distribution p, a drafter distribution q, and n i.i.d.
drafted tokens, the best possible verifier is the solution of an optimal
transport problem between p and the draft-tuple distribution.  This
package computes that verifier three ways: a closed-form subset sweep
for the optimal acceptance rate, exact max-flow solves for reference
plans, and a truncated convex path whose accuracy is tunable through a
budget tau with certified deviation bounds.
"""

from .convex import (
    CoefficientTable,
    ConvexSolveResult,
    EarlyTermination,
    Truncation,
    eval_inner,
    eval_outer,
    minimize,
    pie_coefficients,
    select_truncation,
)
from .dist import (
    ProbDist,
    ProblemInstance,
    apply_temperature,
    enumerate_multisets,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    make_instance,
    multiset_key,
    multiset_mass,
    save_instance,
    set_mass,
    top_k_truncate,
    tuple_mass,
)
from .flow import (
    BipartiteNetwork,
    MaxFlowNetwork,
    SparsePlan,
    build_full_network,
    build_inner_network,
    build_outer_network,
    complete_plan,
    solve_optimized_exact,
    solve_relaxed_exact,
)
from .harness import (
    BenchReport,
    RunReport,
    SyntheticModelPair,
    decode_distribution,
    dirichlet_instance,
    distribution_l1,
    run_bench,
    run_multi_step,
    run_single_step,
    target_prefix_distribution,
    zipf_instance,
)
from .oracle import (
    ValidationReport,
    brute_force_alpha,
    canonical_beta,
    lp_reference,
    validate_plan,
)
from .residuals import (
    FeasibilityResult,
    OuterResiduals,
    check_outer_feasibility,
    solve_outer_residuals,
)
from .subset import (
    SubsetSolution,
    alpha_single_draft,
    constrained_min_psi,
    psi,
    solve_h_star,
)
from .transport import (
    ExactPrecomputation,
    Precomputation,
    TransportSlice,
    VerifyOutcome,
    achieved_acceptance,
    exact_precompute,
    exact_slice,
    full_plan_global,
    ot_slice,
    precompute,
    verify_token,
)

__version__ = "0.1.0"

__all__ = [
    "BenchReport",
    "BipartiteNetwork",
    "CoefficientTable",
    "ConvexSolveResult",
    "EarlyTermination",
    "ExactPrecomputation",
    "FeasibilityResult",
    "MaxFlowNetwork",
    "OuterResiduals",
    "Precomputation",
    "ProbDist",
    "ProblemInstance",
    "RunReport",
    "SparsePlan",
    "SubsetSolution",
    "SyntheticModelPair",
    "TransportSlice",
    "Truncation",
    "ValidationReport",
    "VerifyOutcome",
    "achieved_acceptance",
    "alpha_single_draft",
    "apply_temperature",
    "brute_force_alpha",
    "build_full_network",
    "build_inner_network",
    "build_outer_network",
    "canonical_beta",
    "check_outer_feasibility",
    "complete_plan",
    "constrained_min_psi",
    "decode_distribution",
    "dirichlet_instance",
    "distribution_l1",
    "enumerate_multisets",
    "eval_inner",
    "eval_outer",
    "exact_precompute",
    "exact_slice",
    "full_plan_global",
    "instance_from_dict",
    "instance_to_dict",
    "load_instance",
    "lp_reference",
    "make_instance",
    "minimize",
    "multiset_key",
    "multiset_mass",
    "ot_slice",
    "pie_coefficients",
    "precompute",
    "psi",
    "run_bench",
    "run_multi_step",
    "run_single_step",
    "save_instance",
    "select_truncation",
    "set_mass",
    "solve_h_star",
    "solve_optimized_exact",
    "solve_outer_residuals",
    "solve_relaxed_exact",
    "target_prefix_distribution",
    "top_k_truncate",
    "tuple_mass",
    "validate_plan",
    "verify_token",
    "zipf_instance",
]
