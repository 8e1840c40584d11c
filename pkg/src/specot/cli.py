"""Command-line front end.

Every verb reads the same JSON instance format (mass vectors or logits
for p and q, the draft count n, optional tau / top_k / temperature) and
emits machine-readable output; see the README for examples.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import convex, harness, oracle, transport
from .dist import ProblemInstance, load_instance, multiset_key
from .flow import SparsePlan, solve_optimized_exact, solve_relaxed_exact
from .residuals import solve_outer_residuals
from .subset import solve_h_star

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_EARLY_TERMINATION = 2


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--input", help="instance JSON file")
    sub.add_argument("--seed", type=int, default=0, help="PRNG seed")
    sub.add_argument("--tau", type=float, default=None, help="accuracy budget override")
    sub.add_argument(
        "--method",
        choices=["lp-exact", "maxflow", "maxflow-opt", "global"],
        default=None,
        help="solver route",
    )
    sub.add_argument("--json", action="store_true", help="machine-readable output")
    sub.add_argument("--threads", type=int, default=1, help="worker threads")


def _load(args) -> ProblemInstance:
    if not args.input:
        raise SystemExit("--input is required for this command")
    inst = load_instance(args.input)
    if args.tau is not None:
        inst = ProblemInstance(p=inst.p, q=inst.q, n=inst.n, tau=args.tau)
    return inst


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _dump_plan(plan: SparsePlan, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (tok, group), mass in sorted(plan.entries.items()):
            joined = ",".join(str(t) for t in group)
            fh.write(f"{tok}\t{joined}\t{mass:.17g}\n")


def _read_plan(path: str) -> SparsePlan:
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tok_s, group_s, mass_s = line.split("\t")
            group = tuple(int(t) for t in group_s.split(","))
            entries[(int(tok_s), group)] = float(mass_s)
    return SparsePlan(entries)


def _cmd_accept(args) -> int:
    inst = _load(args)
    sol = solve_h_star(inst)
    _emit(
        {
            "alpha_star": sol.alpha_star,
            "h_star": sorted(sol.h_star),
            "psi": sol.psi_h_star,
        }
    )
    return EXIT_OK


def _cmd_solve(args) -> int:
    inst = _load(args)
    method = args.method or "maxflow"
    payload: dict = {"method": method}
    plan: SparsePlan | None = None
    if method == "lp-exact":
        alpha, plan = oracle.lp_reference(inst)
        payload["alpha"] = alpha
    elif method == "maxflow":
        plan = solve_relaxed_exact(inst)
        alpha = plan.objective
        payload["alpha"] = alpha
        active_p = math.fsum(float(inst.p.mass[i]) for i in inst.active_vocab)
        payload["row_deficit_total"] = active_p - alpha
        payload["col_deficit_total"] = 1.0 - alpha
    elif method == "maxflow-opt":
        sol = solve_h_star(inst)
        res = solve_outer_residuals(inst, sol)
        entries: dict = {}
        outer_obj = 0.0
        if any(int(t) not in sol.h_star for t in inst.active_vocab):
            probe = next(
                int(t) for t in inst.active_vocab if int(t) not in sol.h_star
            )
            outer = solve_optimized_exact(inst, sol, res, (probe,) * inst.n)
            outer_obj = outer.objective
            entries.update(outer.entries)
        inner_obj = 0.0
        if sol.h_star:
            inner = solve_optimized_exact(
                inst, sol, res, (min(sol.h_star),) * inst.n
            )
            inner_obj = inner.objective
            entries.update(inner.entries)
        plan = SparsePlan(entries)
        p_h = math.fsum(float(inst.p.mass[i]) for i in sol.h_star)
        payload["alpha"] = p_h + outer_obj
        payload["h_star"] = sorted(sol.h_star)
        payload["outer_deficit"] = (
            math.fsum(float(res.p_lower[i]) for i in range(inst.full_vocab_size)
                      if i not in sol.h_star) - outer_obj
        )
        payload["inner_deficit"] = p_h - inner_obj
    else:  # global
        pre = transport.precompute(
            inst,
            tau=args.tau,
            cap_override=args.trunc_cap_override,
            max_iter=args.max_iter,
        )
        if pre.failed:
            _emit({"status": "early_termination", "reason": pre.failure_reason})
            return EXIT_EARLY_TERMINATION
        payload["alpha_star"] = pre.alpha_star
        payload["alpha"] = transport.achieved_acceptance(inst, pre)
        payload["h_star"] = sorted(pre.subset_solution.h_star)
        for name, system in (("inner", pre.inner), ("outer", pre.outer)):
            if system is None:
                continue
            payload[name] = {
                "truncation_size": len(system.truncation.tokens),
                "tunable_error": system.truncation.tunable_error,
                "grad_l1": system.result.grad_l1,
                "iterations": system.result.iterations,
                "status": system.result.status,
            }
        if args.dump_plan:
            plan = transport.full_plan_global(inst, pre)
    if args.emit_residuals:
        sol = solve_h_star(inst)
        res = solve_outer_residuals(inst, sol)
        payload["residuals"] = {
            "p_lower": {
                str(i): float(res.p_lower[i])
                for i in range(inst.full_vocab_size)
                if i not in sol.h_star and res.p_lower[i] > 0.0
            },
            "residual": {
                str(i): float(res.residual[i])
                for i in range(inst.full_vocab_size)
                if res.residual[i] > 0.0
            },
            "residual_total": res.residual_total,
        }
    if args.dump_plan and plan is not None:
        _dump_plan(plan, args.dump_plan)
        payload["plan_file"] = args.dump_plan
    _emit(payload)
    return EXIT_OK


def _cmd_slice(args) -> int:
    inst = _load(args)
    omega = tuple(int(t) for t in args.omega.split(","))
    method = args.method or "global"
    if method == "global":
        pre = transport.precompute(inst, tau=args.tau)
        sl = transport.ot_slice(inst, pre, omega)
    elif method in ("maxflow", "maxflow-opt"):
        sl = transport.exact_slice(inst, omega, optimized=method == "maxflow-opt")
    else:
        raise SystemExit(f"slice does not support method {method!r}")
    if args.json:
        _emit(
            {
                "omega": list(omega),
                "method": sl.method,
                "fallback": sl.fallback,
                "probs": {str(t): v for t, v in sl.probs.items()},
                "meta": sl.meta,
            }
        )
    else:
        for key, val in sorted(sl.meta.items()):
            print(f"# {key}={val}")
        print(f"# method={sl.method} fallback={sl.fallback}")
        for tok, val in sl.probs.items():
            print(f"{tok}\t{val:.12g}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    inst = _load(args)
    pre = transport.precompute(inst, tau=args.tau)
    rng = np.random.default_rng(args.seed)
    accepted = 0
    cache: dict = {}
    for _ in range(args.samples):
        omega = tuple(
            int(t)
            for t in rng.choice(
                inst.full_vocab_size, size=inst.n, p=inst.q.mass
            )
        )
        key = multiset_key(omega)
        sl = cache.get(key)
        if sl is None:
            sl = transport.ot_slice(inst, pre, key)
            cache[key] = sl
        token = sl.sample(float(rng.random()))
        ok = token in key
        accepted += ok
        if args.json:
            _emit({"omega": list(omega), "token": token, "accepted": bool(ok)})
        else:
            joined = ",".join(str(t) for t in omega)
            print(f"{joined}\t{token}\t{int(ok)}")
    rate = accepted / args.samples if args.samples else 0.0
    print(
        f"# accepted {accepted}/{args.samples} rate={rate:.6f} "
        f"alpha_star={pre.alpha_star:.6f}",
        file=sys.stderr,
    )
    return EXIT_OK


def _cmd_oracle(args) -> int:
    inst = _load(args)
    if args.check == "alpha":
        ref, _ = oracle.brute_force_alpha(inst)
        fast = solve_h_star(inst).alpha_star
        gap = abs(ref - fast)
        ok = gap <= 1e-9
        print(f"{'PASS' if ok else 'FAIL'} alpha brute={ref:.12f} fast={fast:.12f} gap={gap:.3e}")
        return EXIT_OK if ok else EXIT_CHECK_FAILED
    if args.check == "plan":
        if not args.plan:
            raise SystemExit("--plan is required for --check plan")
        plan = _read_plan(args.plan)
        report = oracle.validate_plan(inst, plan, mode=args.mode, tol=args.tol)
        print(
            f"{'PASS' if report.ok else 'FAIL'} plan mode={report.mode} "
            f"objective={report.objective:.12f} "
            f"max_row={report.max_row_violation:.3e} "
            f"max_col={report.max_col_violation:.3e} "
            f"support_ok={report.support_ok}"
        )
        return EXIT_OK if report.ok else EXIT_CHECK_FAILED
    # beta: decompose a relaxed plan into per-tuple acceptance rules
    plan = _read_plan(args.plan) if args.plan else solve_relaxed_exact(inst)
    value, _ = oracle.canonical_beta(inst, plan)
    ref, _ = oracle.brute_force_alpha(inst)
    gap = abs(value - ref)
    ok = gap <= 1e-9
    print(f"{'PASS' if ok else 'FAIL'} beta objective={value:.12f} alpha={ref:.12f} gap={gap:.3e}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _cmd_simulate(args) -> int:
    inst = _load(args)
    pre = transport.precompute(inst, tau=args.tau)
    report = harness.run_single_step(
        inst, args.samples, args.seed, pre=pre, threads=args.threads
    )
    payload = report.stable_dict()
    payload["solve_ms_median"] = report.solve_ms_median
    _emit(payload)
    return EXIT_OK


def _cmd_multistep(args) -> int:
    models = harness.SyntheticModelPair.random(
        args.vocab, seed=args.seed, similarity=args.similarity
    )
    report = harness.run_multi_step(
        models,
        num_blocks=args.blocks,
        path_len=args.path_len,
        num_paths=args.paths,
        tau=args.tau if args.tau is not None else 1e-3,
        seed=args.seed,
        threads=args.threads,
    )
    _emit(report.stable_dict())
    return EXIT_OK


def _parse_cells(text: str) -> list[tuple[int, int, str]]:
    cells = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        k_s, n_s, method = (x.strip() for x in part.split(","))
        cells.append((int(k_s), int(n_s), method))
    return cells


def _cmd_bench(args) -> int:
    cells = _parse_cells(args.cells) if args.cells else list(harness.DEFAULT_BENCH_CELLS)
    report = harness.run_bench(
        cells,
        instances_per_cell=args.instances,
        tau=args.tau if args.tau is not None else 1e-3,
        seed=args.seed,
    )
    if args.csv:
        report.to_csv(args.csv)
    if args.json:
        _emit({"rows": report.rows})
    else:
        print(report.table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specot",
        description="Optimal-transport verification for multi-draft speculative sampling",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("accept", help="optimal acceptance rate and set")
    _common_flags(sub)
    sub.set_defaults(handler=_cmd_accept)

    sub = subs.add_parser("solve", help="solve for a coupling")
    _common_flags(sub)
    sub.add_argument("--emit-residuals", action="store_true")
    sub.add_argument("--dump-plan", metavar="PATH")
    sub.add_argument("--max-iter", type=int, default=convex.MAX_ITER)
    sub.add_argument("--trunc-cap-override", type=int, default=None)
    sub.set_defaults(handler=_cmd_solve)

    sub = subs.add_parser("slice", help="conditional distribution for one tuple")
    _common_flags(sub)
    sub.add_argument("--omega", required=True, help="comma-joined drafted tokens")
    sub.set_defaults(handler=_cmd_slice)

    sub = subs.add_parser("verify", help="stream verified samples")
    _common_flags(sub)
    sub.add_argument("--samples", type=int, default=1000)
    sub.set_defaults(handler=_cmd_verify)

    sub = subs.add_parser("oracle", help="brute-force cross-checks")
    _common_flags(sub)
    sub.add_argument("--check", choices=["alpha", "plan", "beta"], required=True)
    sub.add_argument("--plan", metavar="PATH", help="plan dump to validate")
    sub.add_argument("--mode", choices=["relaxed", "otlp"], default="relaxed")
    sub.add_argument("--tol", type=float, default=1e-9)
    sub.set_defaults(handler=_cmd_oracle)

    sub = subs.add_parser("simulate", help="single-step sampling statistics")
    _common_flags(sub)
    sub.add_argument("--samples", type=int, default=10000)
    sub.set_defaults(handler=_cmd_simulate)

    sub = subs.add_parser("multistep", help="draft-tree decoding on synthetic models")
    _common_flags(sub)
    sub.add_argument("--blocks", type=int, default=200)
    sub.add_argument("--path-len", type=int, default=2)
    sub.add_argument("--paths", type=int, default=2)
    sub.add_argument("--vocab", type=int, default=12)
    sub.add_argument("--similarity", type=float, default=4.0)
    sub.set_defaults(handler=_cmd_multistep)

    sub = subs.add_parser("bench", help="timing grid over methods")
    _common_flags(sub)
    sub.add_argument("--cells", help='grid as "k,n,method;k,n,method;..."')
    sub.add_argument("--instances", type=int, default=5)
    sub.add_argument("--csv", metavar="PATH")
    sub.set_defaults(handler=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except convex.EarlyTermination as stop:
        _emit({"status": "early_termination", "reason": stop.reason})
        return EXIT_EARLY_TERMINATION


if __name__ == "__main__":
    sys.exit(main())
