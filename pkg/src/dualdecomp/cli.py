"""Command-line interface: solve, bench, verify.

Exit codes: ``solve`` returns 0 when converged, 2 when the iteration cap was
hit, 1 on parse/build errors; ``verify`` returns 0 when every check passes
and 3 on any violated certificate.
"""

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field

from . import apps, certificates, probio, verify
from .algorithms import CONVERGED, SolverConfig, solve
from .builtin import builtin_instances
from .errors import DualDecompError
from .oracle import lipschitz_profile, weight_matrix
from .reference import reference_solve

_METHOD_COLUMNS = [
    ("dfg", "distributed"), ("dfg", "centralized"),
    ("hdfg", "distributed"), ("hdfg", "centralized"),
    ("dg", "distributed"), ("dg", "centralized"),
]
_COLUMN_NAMES = ["dfg_dist", "dfg_cent", "hdfg_dist", "hdfg_cent", "dg_dist", "dg_cent"]


@dataclass
class RunManifest:
    """Everything needed to reproduce one solver run bit for bit."""

    problem: str
    builder: str
    builder_config: dict | None
    method: str
    step_mode: str
    eps: float
    max_iters: int
    trace_stride: int
    stop_rule: str
    backend: str
    fstar_source: str
    reference: dict | None = None
    outputs: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    iterations: int = 0
    termination: str = ""


def _load_problem(path, builder_config=None):
    """A problem file is MATPOWER case text (.m) or the JSON problem format."""
    if path.endswith(".m"):
        with open(path) as fh:
            text = fh.read()
        params = apps.CostParams.from_dict(builder_config or {})
        case = apps.parse_matpower(
            text,
            theta_box=params.theta_box or apps.DEFAULT_THETA_BOX,
        )
        return apps.build_dcopf(case, params), "dcopf"
    return probio.load_problem(path), "json"


class _FstarOnly:
    def __init__(self, fstar):
        self.fstar = fstar
        self.zstar = None
        self.lamstar = None


def _resolve_reference(instance, fstar_arg, backend):
    if fstar_arg is None:
        return None, "none"
    if fstar_arg == "auto":
        ref = reference_solve(instance, backend=backend)
        return ref, "auto"
    return _FstarOnly(float(fstar_arg)), "value"


def _reference_record(ref):
    if ref is None or isinstance(ref, _FstarOnly):
        return None if ref is None else {"fstar": ref.fstar, "method": "supplied"}
    return {
        "fstar": ref.fstar,
        "method": ref.method,
        "dual_gap_estimate": ref.dual_gap_estimate,
        "iterations": ref.iterations,
        "strict_complementarity": ref.strict_complementarity,
        "R_approximate": ref.R_approximate,
    }


def _final_certificates(instance, trace, reference):
    """Certificate snapshot at the final answer, for the JSON report."""
    import math

    from dataclasses import asdict as dc_asdict

    if trace.z is None or reference is None or reference.fstar is None:
        return None
    profile = lipschitz_profile(instance)
    W = weight_matrix(instance, profile)
    gradmap = trace.rows[-1].gradmap if trace.rows else math.nan
    kappa = trace.rows[-1].kappa_hat if trace.rows else math.nan
    bounds = {}
    R_approx = False
    if getattr(reference, "lamstar", None) is not None:
        R = certificates.estimate_R(instance, W, reference.lamstar)
        bounds = certificates.theoretical_bounds(
            trace.iterations, R, instance.sigma_f,
            kappa=None if math.isnan(kappa) else kappa,
            d0=None, fstar=reference.fstar)
        bounds["R"] = R
        R_approx = getattr(reference, "R_approximate", False)
    rep = certificates.CertificateReport(
        k=trace.iterations,
        dual_gap=reference.fstar - trace.best_d,
        primal_gap=trace.f - reference.fstar,
        feas=trace.feas,
        gradmap_norm=gradmap,
        bounds=bounds,
        kappa_hat=kappa,
        R_approximate=R_approx,
    )
    return dc_asdict(rep)


def cmd_solve(args):
    try:
        builder_config = json.loads(args.builder_config) if args.builder_config else None
        instance, builder = _load_problem(args.problem, builder_config)
    except (OSError, DualDecompError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    reference, fstar_source = _resolve_reference(instance, args.fstar, args.backend)
    config = SolverConfig(
        method=args.method, step_mode=args.steps, eps=args.eps,
        max_iters=args.max_iters, hdfg_phase_length=args.hdfg_k,
        trace_stride=args.stride if args.trace else 0,
        stop_rule="fstar-relative" if reference is not None else "gradmap",
    )
    t0 = time.perf_counter()
    trace = solve(instance, config, reference=reference, backend=args.backend)
    wall = time.perf_counter() - t0

    manifest = RunManifest(
        problem=args.problem, builder=builder, builder_config=builder_config,
        method=args.method, step_mode=args.steps, eps=args.eps,
        max_iters=args.max_iters, trace_stride=config.trace_stride,
        stop_rule=config.stop_rule, backend=args.backend,
        fstar_source=fstar_source, reference=_reference_record(reference),
        wall_time_s=wall, iterations=trace.iterations,
        termination=trace.termination,
    )
    if args.trace:
        if args.trace.endswith(".json"):
            with open(args.trace, "w") as fh:
                json.dump({"rows": trace.rows_as_dicts()}, fh, indent=1)
        else:
            trace.to_csv(args.trace)
        manifest.outputs["trace"] = args.trace
    if args.report:
        report = {
            "manifest": asdict(manifest),
            "answer": {
                "d": trace.d, "f": trace.f, "feas": trace.feas,
                "best_d": trace.best_d, "iterations": trace.iterations,
                "termination": trace.termination,
                "z": None if trace.z is None else list(map(float, trace.z)),
                "nu": list(map(float, trace.lam.nu)),
                "mu": list(map(float, trace.lam.mu)),
            },
        }
        cert = _final_certificates(instance, trace, reference)
        if cert is not None:
            report["certificates"] = cert
        if args.method == "dg" and len(trace.rows) >= 10 and trace.fstar is not None:
            try:
                slope, intercept, corr = certificates.fit_linear_rate(
                    [(r.k, r.dual_gap) for r in trace.rows]
                )
                report["linear_rate_fit"] = {
                    "slope": slope, "intercept": intercept, "correlation": corr,
                }
            except DualDecompError:
                pass
        manifest.outputs["report"] = args.report
        report["manifest"]["outputs"] = manifest.outputs
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=1)
    print(f"{trace.termination}: {trace.iterations} iterations, "
          f"d = {trace.d:.10g}, f(candidate) = {trace.f:.10g}, "
          f"feasibility = {trace.feas:.3e}, wall {wall:.2f}s")
    return 0 if trace.termination == CONVERGED else 2


def cmd_bench(args):
    if not args.cases:
        print("error: no case files given", file=sys.stderr)
        return 1
    rows = []
    for path in args.cases:
        name = path.rsplit("/", 1)[-1]
        try:
            instance, _ = _load_problem(path)
            reference = reference_solve(instance, backend=args.backend)
        except (OSError, DualDecompError, ValueError) as exc:
            rows.append((name, [f"error: {exc}"] * len(_METHOD_COLUMNS)))
            continue
        cells = []
        for method, mode in _METHOD_COLUMNS:
            config = SolverConfig(
                method=method, step_mode=mode, eps=args.eps,
                max_iters=args.max_iters, trace_stride=0, certificates=False,
            )
            try:
                trace = solve(instance, config, reference=reference,
                              backend=args.backend)
                cells.append(str(trace.iterations)
                             if trace.termination == CONVERGED else "*")
            except DualDecompError as exc:
                cells.append(f"error: {exc}")
        rows.append((name, cells))
        print(f"{name}: " + " ".join(f"{c}={v}" for c, v in zip(_COLUMN_NAMES, cells)))
    header = ["case"] + _COLUMN_NAMES
    lines = [",".join(header)] + [",".join([n] + c) for n, c in rows]
    out = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write(out)
    else:
        print(out, end="")
    return 0


def cmd_verify(args):
    results = []
    try:
        if args.builtin or not args.problem:
            for name, (instance, info) in builtin_instances().items():
                reference = reference_solve(instance, backend=args.backend)
                suite = verify.run_suite(
                    instance, reference, dfg_iters=min(args.iters, 300),
                    dg_iters=min(args.iters, 2000), rounds=30, pairs=60,
                    backend=args.backend,
                    corrupt_weight=(0, 7.5) if args.inject_w_fault else None,
                )
                for r in suite:
                    results.append(r)
                    print(f"[{name}] {r.line()}")
        else:
            instance, _ = _load_problem(args.problem)
            reference = reference_solve(instance, backend=args.backend)
            suite = verify.run_suite(
                instance, reference, dfg_iters=args.iters,
                dg_iters=min(10 * args.iters, 20000), rounds=50, pairs=60,
                backend=args.backend,
                corrupt_weight=(0, 7.5) if args.inject_w_fault else None,
            )
            for r in suite:
                results.append(r)
                print(r.line())
    except (OSError, DualDecompError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 3 if failed else 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dualdecomp",
        description="Distributed dual (fast) gradient solvers with certificates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one problem file")
    p_solve.add_argument("problem", help="MATPOWER .m case or problem .json")
    p_solve.add_argument("--method", choices=["dfg", "hdfg", "dg"], default="dfg")
    p_solve.add_argument("--steps", choices=["distributed", "centralized"],
                         default="distributed")
    p_solve.add_argument("--eps", type=float, default=0.01)
    p_solve.add_argument("--max-iters", type=int, default=300_000)
    p_solve.add_argument("--fstar", default=None,
                         help="reference optimal value, or 'auto'")
    p_solve.add_argument("--hdfg-k", type=int, default=None,
                         help="fixed hybrid phase length (default: doubling)")
    p_solve.add_argument("--stride", type=int, default=1,
                         help="trace recording stride")
    p_solve.add_argument("--trace", default=None, help="trace CSV output path")
    p_solve.add_argument("--report", default=None, help="report JSON output path")
    p_solve.add_argument("--builder-config", default=None,
                         help="JSON cost-params for the power-flow builder")
    p_solve.add_argument("--backend", choices=["auto", "python", "compiled"],
                         default="auto")
    p_solve.set_defaults(func=cmd_solve)

    p_bench = sub.add_parser("bench", help="iteration-count table over cases")
    p_bench.add_argument("cases", nargs="*", help="case files")
    p_bench.add_argument("--eps", type=float, default=0.01)
    p_bench.add_argument("--max-iters", type=int, default=300_000)
    p_bench.add_argument("--out", default=None, help="output CSV path")
    p_bench.add_argument("--backend", choices=["auto", "python", "compiled"],
                         default="auto")
    p_bench.set_defaults(func=cmd_bench)

    p_verify = sub.add_parser("verify", help="run the invariant suite")
    p_verify.add_argument("problem", nargs="?", default=None)
    p_verify.add_argument("--builtin", action="store_true",
                          help="verify the built-in analytic instances")
    p_verify.add_argument("--iters", type=int, default=300)
    p_verify.add_argument("--inject-w-fault", action="store_true",
                          help="corrupt one block weight (must make verify fail)")
    p_verify.add_argument("--backend", choices=["auto", "python", "compiled"],
                          default="auto")
    p_verify.set_defaults(func=cmd_verify)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
