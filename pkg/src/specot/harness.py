"""Statistical harness: simulated decoding against synthetic models.

Everything here exercises the solver stack end to end: single-step
sampling checks that verified tokens really follow the target
distribution at the promised rate, multi-step decoding runs draft trees
of i.i.d. paths through per-node verification, and the benchmark grid
times the exact and approximate pipelines side by side.  Synthetic
language models are order-1 Markov chains with Dirichlet rows so every
conditional distribution is available in closed form.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .dist import ProblemInstance, make_instance
from .flow import solve_relaxed_exact, solve_optimized_exact
from .residuals import solve_outer_residuals
from .subset import solve_h_star
from .transport import (
    ExactPrecomputation,
    Precomputation,
    exact_precompute,
    exact_slice,
    ot_slice,
    precompute,
)


@dataclass(frozen=True)
class SyntheticModelPair:
    """Target and drafter Markov chains over a shared vocabulary.

    ``similarity`` steers how close the drafter rows sit to the target
    rows: each drafter row is Dirichlet with concentration proportional
    to ``similarity * vocab_size * target_row``, so large values give a
    strong drafter and values near zero an unrelated one.
    """

    target_rows: np.ndarray
    draft_rows: np.ndarray
    seed: int

    @property
    def vocab_size(self) -> int:
        return int(self.target_rows.shape[0])

    @classmethod
    def random(
        cls, vocab_size: int, seed: int, similarity: float = 4.0
    ) -> "SyntheticModelPair":
        rng = np.random.default_rng(seed)
        target = rng.dirichlet(np.ones(vocab_size), size=vocab_size)
        conc = similarity * vocab_size * target + 0.05
        draft = np.vstack([rng.dirichlet(row) for row in conc])
        return cls(target_rows=target, draft_rows=draft, seed=seed)

    def step_instance(self, context: int, n: int, tau: float) -> ProblemInstance:
        return make_instance(
            self.target_rows[context], self.draft_rows[context], n, tau
        )


@dataclass
class RunReport:
    """Aggregated statistics from a sampling run.

    ``stable_dict`` holds only the seed-determined fields; wall-clock
    timings live alongside but never enter determinism comparisons.
    """

    kind: str
    num_samples: int
    seed: int
    alpha_star: float | None = None
    empirical_acceptance: float | None = None
    empirical_token_l1: float | None = None
    failure_rate: float = 0.0
    block_efficiency: float | None = None
    token_counts: dict[int, int] = field(default_factory=dict)
    solve_ms_mean: float = 0.0
    solve_ms_median: float = 0.0
    solve_ms_p99: float = 0.0
    extra: dict = field(default_factory=dict)

    def stable_dict(self) -> dict:
        return {
            "kind": self.kind,
            "num_samples": self.num_samples,
            "seed": self.seed,
            "alpha_star": self.alpha_star,
            "empirical_acceptance": self.empirical_acceptance,
            "empirical_token_l1": self.empirical_token_l1,
            "failure_rate": self.failure_rate,
            "block_efficiency": self.block_efficiency,
            "token_counts": {str(k): v for k, v in sorted(self.token_counts.items())},
            "extra": {k: self.extra[k] for k in sorted(self.extra)},
        }


def _chunk_sizes(total: int, chunks: int) -> list[int]:
    base, rem = divmod(total, chunks)
    return [base + (1 if c < rem else 0) for c in range(chunks)]


def run_single_step(
    instance: ProblemInstance,
    num_samples: int,
    seed: int,
    pre: Precomputation | None = None,
    threads: int = 1,
) -> RunReport:
    """Draw tuples from the drafter, verify each, tally the outcomes.

    Slices are cached per draft multiset (the conditional depends on the
    tuple only through its member set), so large sample counts stay
    cheap.  With ``threads`` > 1 the samples split into independently
    seeded streams merged in stream order; results depend on (seed,
    threads) but not on scheduling.
    """
    if pre is None:
        pre = precompute(instance)
    threads = max(1, int(threads))
    seeds = np.random.SeedSequence(seed).spawn(threads)
    sizes = _chunk_sizes(num_samples, threads)

    def one_stream(stream: int) -> tuple[int, dict[int, int], int, list[float]]:
        rng = np.random.default_rng(seeds[stream])
        count = sizes[stream]
        if count == 0:
            return 0, {}, 0, []
        omegas = rng.choice(
            instance.full_vocab_size, size=(count, instance.n), p=instance.q.mass
        )
        us = rng.random(count)
        cache: dict[tuple[int, ...], object] = {}
        accepted = 0
        counts: dict[int, int] = {}
        fallbacks = 0
        times: list[float] = []
        for row, u in zip(omegas, us):
            key = tuple(sorted(int(t) for t in row))
            t0 = time.perf_counter()
            sl = cache.get(key)
            if sl is None:
                sl = ot_slice(instance, pre, key)
                cache[key] = sl
            token = sl.sample(float(u))
            times.append((time.perf_counter() - t0) * 1e3)
            if token in key:
                accepted += 1
            if sl.fallback:
                fallbacks += 1
            counts[token] = counts.get(token, 0) + 1
        return accepted, counts, fallbacks, times

    if threads == 1:
        results = [one_stream(0)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_stream, range(threads)))

    accepted = sum(r[0] for r in results)
    counts: dict[int, int] = {}
    for _, c, _, _ in results:
        for tok, v in c.items():
            counts[tok] = counts.get(tok, 0) + v
    fallbacks = sum(r[2] for r in results)
    times = [t for r in results for t in r[3]]
    l1 = math.fsum(
        abs(counts.get(tok, 0) / num_samples - float(instance.p.mass[tok]))
        for tok in range(instance.full_vocab_size)
    )
    times_arr = np.asarray(times) if times else np.zeros(1)
    return RunReport(
        kind="single-step",
        num_samples=num_samples,
        seed=seed,
        alpha_star=pre.alpha_star,
        empirical_acceptance=accepted / num_samples,
        empirical_token_l1=float(l1),
        failure_rate=fallbacks / num_samples,
        token_counts=counts,
        solve_ms_mean=float(times_arr.mean()),
        solve_ms_median=float(np.median(times_arr)),
        solve_ms_p99=float(np.percentile(times_arr, 99)),
        extra={"failed_precompute": pre.failed},
    )


def run_multi_step(
    models: SyntheticModelPair,
    num_blocks: int,
    path_len: int,
    num_paths: int,
    tau: float,
    seed: int,
    start_token: int = 0,
    threads: int = 1,
) -> RunReport:
    """Decode blocks through a draft tree of i.i.d. paths.

    Each block drafts ``num_paths`` autoregressive paths of length
    ``path_len`` from the drafter, then walks them as a tree: at every
    accepted prefix the next tokens of the still-consistent paths form
    the drafted tuple (duplicates kept; the draw really was i.i.d.), and
    the verified token either descends or ends the block.  A fully
    accepted path earns one bonus token from the target.  Every block
    therefore emits between 1 and path_len + 1 tokens; the mean is the
    block efficiency.  With ``threads`` > 1 the blocks split into
    independent decode streams merged in stream order.
    """
    threads = max(1, int(threads))
    seeds = np.random.SeedSequence(seed).spawn(threads)
    sizes = _chunk_sizes(num_blocks, threads)

    def one_stream(stream: int) -> tuple[int, int, int, int, list[float]]:
        rng = np.random.default_rng(seeds[stream])
        cache: dict[tuple[int, int], tuple[ProblemInstance, Precomputation]] = {}
        emitted_total = 0
        accepted_total = 0
        verifications = 0
        fallbacks = 0
        times: list[float] = []
        context = start_token
        for _ in range(sizes[stream]):
            paths = np.empty((num_paths, path_len), dtype=np.int64)
            for j in range(num_paths):
                c = context
                for d in range(path_len):
                    c = int(
                        rng.choice(models.vocab_size, p=models.draft_rows[c])
                    )
                    paths[j, d] = c
            consistent = list(range(num_paths))
            c = context
            emitted = 0
            depth = 0
            while depth < path_len:
                omega = tuple(int(paths[j, depth]) for j in consistent)
                kind = (c, len(omega))
                hit = cache.get(kind)
                if hit is None:
                    inst = models.step_instance(c, len(omega), tau)
                    hit = (inst, precompute(inst))
                    cache[kind] = hit
                inst, pre = hit
                t0 = time.perf_counter()
                sl = ot_slice(inst, pre, omega)
                token = sl.sample(float(rng.random()))
                times.append((time.perf_counter() - t0) * 1e3)
                verifications += 1
                if sl.fallback:
                    fallbacks += 1
                emitted += 1
                if token in omega:
                    accepted_total += 1
                    consistent = [
                        j for j in consistent if int(paths[j, depth]) == token
                    ]
                    c = token
                    depth += 1
                else:
                    c = token
                    break
            else:
                # every level accepted: one bonus token straight from the target
                token = int(rng.choice(models.vocab_size, p=models.target_rows[c]))
                emitted += 1
                c = token
            emitted_total += emitted
            context = c
        return emitted_total, accepted_total, verifications, fallbacks, times

    if threads == 1:
        results = [one_stream(0)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_stream, range(threads)))

    emitted = sum(r[0] for r in results)
    accepted = sum(r[1] for r in results)
    verifications = sum(r[2] for r in results)
    fallbacks = sum(r[3] for r in results)
    times = [t for r in results for t in r[4]]
    times_arr = np.asarray(times) if times else np.zeros(1)
    return RunReport(
        kind="multi-step",
        num_samples=num_blocks,
        seed=seed,
        empirical_acceptance=accepted / verifications if verifications else None,
        failure_rate=fallbacks / verifications if verifications else 0.0,
        block_efficiency=emitted / num_blocks if num_blocks else None,
        solve_ms_mean=float(times_arr.mean()),
        solve_ms_median=float(np.median(times_arr)),
        solve_ms_p99=float(np.percentile(times_arr, 99)),
        extra={"verifications": verifications, "path_len": path_len,
               "num_paths": num_paths},
    )


# ---------------------------------------------------------------------------
# exhaustive decode enumeration (tiny models only)

def decode_distribution(
    models: SyntheticModelPair,
    path_len: int,
    num_paths: int,
    tau: float,
    length: int,
    start_token: int = 0,
    exact: bool = False,
) -> dict[tuple[int, ...], float]:
    """Exact distribution of the first ``length`` decoded tokens.

    Enumerates every draft-tree outcome and every verification draw with
    its probability instead of sampling, then chains blocks until
    ``length`` tokens are fixed.  Cost explodes combinatorially; meant
    for vocabularies of a handful of tokens.
    """
    V = models.vocab_size
    pre_cache: dict[tuple[int, int], tuple[ProblemInstance, object]] = {}

    def node_slice(context: int, omega: tuple[int, ...]):
        key = (context, len(omega))
        hit = pre_cache.get(key)
        if hit is None:
            inst = models.step_instance(context, len(omega), tau)
            solved = (
                exact_precompute(inst) if exact else precompute(inst)
            )
            pre_cache[key] = (inst, solved)
            hit = pre_cache[key]
        inst, solved = hit
        if exact:
            return exact_slice(inst, omega, pre=solved)
        return ot_slice(inst, solved, omega)

    def block_emissions(context: int) -> dict[tuple[int, ...], float]:
        """Distribution over the token strings one block emits."""
        out: dict[tuple[int, ...], float] = {}

        def walk(
            depth: int,
            ctx: int,
            consistent: tuple[int, ...],
            paths: tuple[tuple[int, ...], ...],
            emitted: tuple[int, ...],
            prob: float,
        ) -> None:
            if depth == path_len:
                for y in range(V):
                    py = float(models.target_rows[ctx][y])
                    if py > 0.0:
                        key = emitted + (y,)
                        out[key] = out.get(key, 0.0) + prob * py
                return
            omega = tuple(paths[j][depth] for j in consistent)
            sl = node_slice(ctx, omega)
            for tok, px in sl.probs.items():
                if px <= 0.0:
                    continue
                if tok in omega:
                    nxt = tuple(j for j in consistent if paths[j][depth] == tok)
                    walk(depth + 1, tok, nxt, paths, emitted + (tok,), prob * px)
                else:
                    key = emitted + (tok,)
                    out[key] = out.get(key, 0.0) + prob * px

        for assignment in product(range(V), repeat=num_paths * path_len):
            paths = tuple(
                tuple(assignment[j * path_len : (j + 1) * path_len])
                for j in range(num_paths)
            )
            prob = 1.0
            for j in range(num_paths):
                c = context
                for d in range(path_len):
                    prob *= float(models.draft_rows[c][paths[j][d]])
                    c = paths[j][d]
                    if prob == 0.0:
                        break
                if prob == 0.0:
                    break
            if prob <= 0.0:
                continue
            walk(0, context, tuple(range(num_paths)), paths, (), prob)
        return out

    block_cache: dict[int, dict[tuple[int, ...], float]] = {}
    prefix_cache: dict[tuple[int, int], dict[tuple[int, ...], float]] = {}

    def prefix_dist(context: int, need: int) -> dict[tuple[int, ...], float]:
        if need == 0:
            return {(): 1.0}
        hit = prefix_cache.get((context, need))
        if hit is not None:
            return hit
        if context not in block_cache:
            block_cache[context] = block_emissions(context)
        out: dict[tuple[int, ...], float] = {}
        for toks, pr in block_cache[context].items():
            if len(toks) >= need:
                key = toks[:need]
                out[key] = out.get(key, 0.0) + pr
            else:
                rest = prefix_dist(toks[-1], need - len(toks))
                for rtoks, rpr in rest.items():
                    key = toks + rtoks
                    out[key] = out.get(key, 0.0) + pr * rpr
        prefix_cache[(context, need)] = out
        return out

    return prefix_dist(start_token, length)


def target_prefix_distribution(
    models: SyntheticModelPair, length: int, start_token: int = 0
) -> dict[tuple[int, ...], float]:
    """Autoregressive target distribution over the first ``length`` tokens."""
    V = models.vocab_size
    out: dict[tuple[int, ...], float] = {}
    for seq in product(range(V), repeat=length):
        prob = 1.0
        c = start_token
        for tok in seq:
            prob *= float(models.target_rows[c][tok])
            c = tok
        if prob > 0.0:
            out[seq] = prob
    return out


def distribution_l1(
    a: dict[tuple[int, ...], float], b: dict[tuple[int, ...], float]
) -> float:
    keys = set(a) | set(b)
    return math.fsum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)


# ---------------------------------------------------------------------------
# synthetic instances and the benchmark grid

def zipf_instance(
    k: int, n: int, tau: float, seed: int, s: float = 1.1
) -> ProblemInstance:
    """Heavy-tailed toy instance: p and q are independently permuted Zipf laws.

    ``k`` is the active vocabulary size, standing in for a top-k slice.
    """
    rng = np.random.default_rng([seed, k, n])
    w = 1.0 / np.arange(1, k + 1, dtype=np.float64) ** s
    p = w[rng.permutation(k)]
    q = w[rng.permutation(k)]
    return make_instance(p / p.sum(), q / q.sum(), n, tau)


def dirichlet_instance(
    vocab: int, n: int, tau: float, seed: int, conc: float = 1.0
) -> ProblemInstance:
    rng = np.random.default_rng([seed, vocab, n])
    p = rng.dirichlet(np.full(vocab, conc))
    q = rng.dirichlet(np.full(vocab, conc))
    return make_instance(p, q, n, tau)


DEFAULT_BENCH_CELLS: tuple[tuple[int, int, str], ...] = (
    (50, 2, "maxflow"),
    (50, 2, "maxflow-opt"),
    (50, 2, "global"),
    (200, 2, "maxflow-opt"),
    (200, 2, "global"),
    (1000, 2, "global"),
)


@dataclass
class BenchReport:
    rows: list[dict]

    COLUMNS = ("k", "n", "method", "mean_ms", "median_ms", "success_rate", "alpha")

    def table(self) -> str:
        def fmt(row: dict) -> list[str]:
            return [
                str(row["k"]),
                str(row["n"]),
                row["method"],
                f"{row['mean_ms']:.3f}",
                f"{row['median_ms']:.3f}",
                f"{row['success_rate']:.2f}",
                f"{row['alpha']:.6f}" if row["alpha"] is not None else "-",
            ]

        cells = [list(self.COLUMNS)] + [fmt(r) for r in self.rows]
        widths = [max(len(row[c]) for row in cells) for c in range(len(self.COLUMNS))]
        lines = [
            "  ".join(val.ljust(w) for val, w in zip(row, widths)).rstrip()
            for row in cells
        ]
        return "\n".join(lines)

    def to_csv(self, path: str) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({c: row[c] for c in self.COLUMNS})


def _bench_one(instance: ProblemInstance, method: str) -> tuple[float, bool, float | None]:
    """Time one per-token solve; returns (ms, success, alpha reported)."""
    from . import transport as _transport

    start = time.perf_counter()
    if method == "maxflow":
        plan = solve_relaxed_exact(instance)
        alpha = plan.objective
        ok = True
    elif method == "maxflow-opt":
        sol = solve_h_star(instance)
        res = solve_outer_residuals(instance, sol)
        alpha_parts = [
            math.fsum(float(instance.p.mass[i]) for i in sol.h_star)
        ]
        if any(int(t) not in sol.h_star for t in instance.active_vocab):
            probe = next(
                int(t) for t in instance.active_vocab if int(t) not in sol.h_star
            )
            outer = solve_optimized_exact(
                instance, sol, res, (probe,) * instance.n
            )
            alpha_parts.append(outer.objective)
        if sol.h_star:
            solve_optimized_exact(instance, sol, res, (min(sol.h_star),) * instance.n)
        alpha = math.fsum(alpha_parts)
        ok = True
    elif method == "global":
        pre = precompute(instance)
        ok = not pre.failed
        alpha = None
        if ok:
            rng = np.random.default_rng(0)
            omega = rng.choice(
                instance.full_vocab_size, size=instance.n, p=instance.q.mass
            )
            ot_slice(instance, pre, tuple(int(t) for t in omega))
            alpha = _transport.achieved_acceptance(instance, pre)
    else:
        raise ValueError(f"unknown bench method {method!r}")
    return (time.perf_counter() - start) * 1e3, ok, alpha


def run_bench(
    cells: tuple[tuple[int, int, str], ...] | list[tuple[int, int, str]] = DEFAULT_BENCH_CELLS,
    instances_per_cell: int = 5,
    tau: float = 1e-3,
    seed: int = 0,
) -> BenchReport:
    """Time each (vocab size, draft count, method) cell on Zipf instances."""
    rows = []
    for k, n, method in cells:
        times: list[float] = []
        alphas: list[float] = []
        successes = 0
        for i in range(instances_per_cell):
            inst = zipf_instance(k, n, tau, seed=seed + 1000 * i)
            ms, ok, alpha = _bench_one(inst, method)
            times.append(ms)
            if ok:
                successes += 1
                if alpha is not None:
                    alphas.append(alpha)
        rows.append(
            {
                "k": k,
                "n": n,
                "method": method,
                "mean_ms": float(np.mean(times)),
                "median_ms": float(np.median(times)),
                "success_rate": successes / instances_per_cell,
                "alpha": float(np.mean(alphas)) if alphas else None,
            }
        )
    return BenchReport(rows=rows)
