#!/usr/bin/env python3
"""
Verification sampling and multi-step decoding
=============================================

Two consumers of the transport slices. First the single-step loop: draw
n drafts, look up the slice for that outcome, accept or resample. Then
the block decoder: a small draft tree of independent paths is verified
position by position, and accepted prefixes plus one bonus token give
the speedup. Both are checked against exact distributions.

Usage:
    python3 demos/04_sampling_and_trees.py
"""

import numpy as np

from specot import (
    SyntheticModelPair,
    decode_distribution,
    distribution_l1,
    make_instance,
    precompute,
    run_multi_step,
    run_single_step,
    target_prefix_distribution,
    verify_token,
)

# ============================================================
# One verification step, by hand
# ============================================================

inst = make_instance(p=[0.5, 0.3, 0.2], q=[0.2, 0.3, 0.5], n=2, tau=1e-3)
pre = precompute(inst)

# drafts came out (1, 2); the slice tells us where the coin lands
out = verify_token(inst, pre, (1, 2), u=0.5)
print(f"drafts (1, 2), u=0.50 -> token {out.token}, accepted={out.accepted}")
out2 = verify_token(inst, pre, (1, 2), u=0.05)
print(f"drafts (1, 2), u=0.05 -> token {out2.token}, accepted={out2.accepted}")
# token 0 is not among the drafts, so drawing it counts as a rejection
assert not out2.accepted and out2.token == 0

# ============================================================
# Monte Carlo over many steps
# ============================================================

rep = run_single_step(inst, num_samples=50_000, seed=123)
se = np.sqrt(0.86 * 0.14 / rep.num_samples)
print(
    f"\n{rep.num_samples} steps: empirical acceptance {rep.empirical_acceptance:.4f}"
    f" vs alpha* {rep.alpha_star:.4f} (sampling se ~ {se:.4f})"
)
print(f"emitted-token L1 to target = {rep.empirical_token_l1:.4f}")
assert abs(rep.empirical_acceptance - rep.alpha_star) < 4 * se

# same seed reproduces the run bit for bit
again = run_single_step(inst, num_samples=50_000, seed=123)
assert again.stable_dict() == rep.stable_dict()
print("re-run with the same seed matches exactly")

# ============================================================
# Block decoding with a draft tree
# ============================================================

rng = np.random.default_rng(2)
target = rng.dirichlet(np.ones(3), size=3)
draft = 0.5 * target + 0.5 * rng.dirichlet(np.ones(3), size=3)
models = SyntheticModelPair(target_rows=target, draft_rows=draft, seed=9)

tree = run_multi_step(models, num_blocks=2000, path_len=2, num_paths=2, tau=1e-3, seed=4)
print(
    f"\nK=2 paths of length L=2: block efficiency "
    f"{tree.block_efficiency:.3f} tokens per target call (max {2 + 1})"
)

# a drafter identical to the target always gets the full block accepted
perfect = SyntheticModelPair(target_rows=target, draft_rows=target.copy(), seed=9)
ideal = run_multi_step(perfect, num_blocks=500, path_len=2, num_paths=1, tau=1e-3, seed=4)
assert ideal.block_efficiency == 3.0
print("perfect drafter: block efficiency exactly L+1 =", ideal.block_efficiency)

# K=1, L=1 reduces to the single-step picture
one = run_multi_step(models, num_blocks=4000, path_len=1, num_paths=1, tau=1e-3, seed=8)
assert abs(one.block_efficiency - (1.0 + one.empirical_acceptance)) < 1e-12

# ============================================================
# The decoder is unbiased: output prefixes follow the target chain
# ============================================================

decoded = decode_distribution(models, path_len=2, num_paths=2, tau=1e-3, length=2)
truth = target_prefix_distribution(models, length=2)
gap = distribution_l1(decoded, truth)
print(f"\nlength-2 prefix distribution, global solver: L1 = {gap:.2e}")
assert gap <= 15 * 2 * 1e-3

exact = decode_distribution(models, path_len=2, num_paths=2, tau=1e-3, length=2, exact=True)
gap_exact = distribution_l1(exact, truth)
print(f"same with the exact flow solver:            L1 = {gap_exact:.2e}")
assert gap_exact <= 1e-6
print("ok")
