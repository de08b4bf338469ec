"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``.  Criterion 4 reproduces
the desk-scale benchmark table; its iteration-count windows are asserted
faithfully even where this build's conditioning is known to land outside
them (the hybrid columns) — see the table it prints.
"""

import math
import time

import numpy as np
import pytest

from dualdecomp import apps, certificates, model, simnet
from dualdecomp._backend import make_oracle
from dualdecomp.algorithms import (
    CONVERGED,
    SolverConfig,
    dg_step,
    init_dg,
    solve,
)
from dualdecomp.builtin import dcopf_toy, eq_toy, ineq_toy, num_toy, num_toy_log
from dualdecomp.oracle import (
    DualPoint,
    inner_solve,
    lipschitz_profile,
    weight_matrix,
)
from dualdecomp.reference import reference_solve
from dualdecomp.verify import (
    check_dfg_certificates,
    check_hdfg_certificates,
    check_sampled_inequalities,
)

from conftest import load_case
from oracles import inner_solve_bruteforce


def _report(num, name, passed, detail):
    print(f"ACCEPTANCE {num} ({name}): {'PASS' if passed else 'FAIL'} — {detail}")


@pytest.fixture(scope="module")
def suite_instances(case9_instance, case9_reference):
    """The five certificate-suite instances with references."""
    out = {}
    for name, (inst, _) in [("eq_toy", eq_toy()), ("ineq_toy", ineq_toy()),
                            ("num_toy", num_toy()), ("dcopf_toy", dcopf_toy())]:
        out[name] = (inst, reference_solve(inst))
    out["case9"] = (case9_instance, case9_reference)
    return out


def test_criterion_1_dfg_theorem_suite(suite_instances):
    t0 = time.perf_counter()
    failures = []
    for name, (inst, ref) in suite_instances.items():
        for res in check_dfg_certificates(inst, ref, iters=2000):
            if not res.passed:
                failures.append(f"{name}:{res.name} ({res.detail})")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60.0
    _report(1, "fast-scheme theorem suite",
            ok, f"{len(suite_instances)} instances x 2000 iterations, "
                f"{elapsed:.1f}s" + (f"; failures: {failures}" if failures else ""))
    assert not failures, failures
    assert elapsed < 60.0, f"runtime {elapsed:.1f}s exceeds 60s"


def test_criterion_2_hdfg_suite(suite_instances):
    failures = []
    for name, (inst, ref) in suite_instances.items():
        for res in check_hdfg_certificates(inst, ref, ks=(8, 32, 128)):
            if not res.passed:
                failures.append(f"{name}:{res.name} ({res.detail})")
    _report(2, "hybrid-scheme suite", not failures,
            "k in {8, 32, 128} on 5 instances"
            + (f"; failures: {failures}" if failures else ""))
    assert not failures, failures


def test_criterion_3_dg_linear_rate(case9_instance, case9_reference):
    detail = []
    ok = True
    for name, (inst, ref) in [
        ("case9", (case9_instance, case9_reference)),
        ("num_toy_log", (num_toy_log()[0], None)),
    ]:
        if ref is None:
            ref = reference_solve(inst)
        W = weight_matrix(inst, lipschitz_profile(inst))
        backend = make_oracle(inst)
        lamstar = ref.lamstar.packed()
        state = init_dg(backend, W)
        prev_dist = W.norm(state.lam - lamstar)
        worst_increase = -math.inf
        gaps = []
        for k in range(50_000):
            dg_step(state)
            dist = W.norm(state.lam - lamstar)
            worst_increase = max(worst_increase, dist - prev_dist)
            prev_dist = dist
            gaps.append((k, ref.fstar - state.d))
        slope, _, corr = certificates.fit_linear_rate(gaps)
        contraction_ok = worst_increase <= 1e-10
        this_ok = corr >= 0.95 and slope < 0 and contraction_ok
        ok = ok and this_ok
        detail.append(f"{name}: slope={slope:.3e} corr={corr:.4f} "
                      f"max-dist-increase={worst_increase:.2e}")
    _report(3, "plain-ascent linear rate", ok, "; ".join(detail))
    assert ok, detail


PAPER_COUNTS = {
    ("dfg", "distributed"): 4486,
    ("dfg", "centralized"): 4134,
    ("hdfg", "distributed"): 700,
    ("hdfg", "centralized"): 646,
    ("dg", "distributed"): 168619,
    ("dg", "centralized"): 143283,
}


def test_criterion_4_table_reproduction(case9_instance, case9_reference):
    t0 = time.perf_counter()
    counts = {}
    converged = {}
    for (method, mode), paper in PAPER_COUNTS.items():
        cfg = SolverConfig(method=method, step_mode=mode, eps=0.01,
                           max_iters=1_000_000, trace_stride=0, certificates=False)
        trace = solve(case9_instance, cfg, reference=case9_reference)
        counts[(method, mode)] = trace.iterations
        converged[(method, mode)] = trace.termination == CONVERGED
    elapsed = time.perf_counter() - t0

    problems = []
    lines = []
    for key, paper in PAPER_COUNTS.items():
        got = counts[key]
        lo, hi = 0.2 * paper, 5.0 * paper
        in_window = converged[key] and lo <= got <= hi
        lines.append(f"{key[0]}/{key[1]}: {got} (paper {paper}, window "
                     f"[{lo:.0f}, {hi:.0f}]) {'ok' if in_window else 'OUT'}")
        if not in_window:
            problems.append(f"{key[0]}/{key[1]} count {got} outside [{lo:.0f}, {hi:.0f}]")
    for mode in ("distributed", "centralized"):
        if not counts[("hdfg", mode)] < counts[("dfg", mode)]:
            problems.append(f"ordering hdfg < dfg violated ({mode})")
        if not counts[("dfg", mode)] < counts[("dg", mode)]:
            problems.append(f"ordering dfg < dg violated ({mode})")
    if elapsed >= 600.0:
        problems.append(f"runtime {elapsed:.0f}s exceeds 10 min")
    _report(4, "benchmark table reproduction", not problems,
            f"{'; '.join(lines)}; wall {elapsed:.0f}s"
            + (f"; PROBLEMS: {problems}" if problems else ""))
    assert not problems, problems


def test_criterion_5_distributed_vs_centralized_trend():
    rows = []
    ok = True
    for name in ("case30", "case39"):
        inst = apps.build_dcopf(load_case(name))
        ref = reference_solve(inst)
        for method in ("dfg", "hdfg"):
            its = {}
            for mode in ("distributed", "centralized"):
                cfg = SolverConfig(method=method, step_mode=mode, eps=0.01,
                                   max_iters=2_000_000, trace_stride=0,
                                   certificates=False)
                trace = solve(inst, cfg, reference=ref)
                its[mode] = (trace.termination, trace.iterations)
            good = (its["distributed"][0] == CONVERGED
                    and its["centralized"][0] == CONVERGED
                    and its["distributed"][1] <= its["centralized"][1])
            ok = ok and good
            rows.append(f"{name}/{method}: dist={its['distributed'][1]} "
                        f"cent={its['centralized'][1]} {'ok' if good else 'OUT'}")
    _report(5, "distributed <= centralized on case30/case39", ok, "; ".join(rows))
    assert ok, rows


def test_criterion_6_lockstep_equivalence(case9_instance):
    rows = []
    ok = True
    for method in ("dfg", "hdfg", "dg"):
        report = simnet.verify_equivalence(case9_instance, method, rounds=500)
        dev = max(report.max_dev_lambda, report.max_dev_z)
        ok = ok and report.passed
        rows.append(f"{method}: max deviation {dev:.2e}")
    _report(6, "simulator lockstep on case9 (500 iterations)", ok, "; ".join(rows))
    assert ok, rows


def test_criterion_7_oracle_correctness(suite_instances):
    rng = np.random.default_rng(71)
    worst_pair = 0.0
    worst_brute = 0.0
    for name in ("case9", "case14", "case30", "case39"):
        case = load_case(name)
        inst = apps.build_dcopf(case)
        recs = apps.dcopf_bus_records(case)
        M = inst.structure.num_agents
        for t in range(1000):
            nu = 3.0 * rng.standard_normal(inst.p)
            mu = 3.0 * np.abs(rng.standard_normal(inst.q))
            price = model.apply_G_transpose(inst, DualPoint(nu, mu))
            i = int(rng.integers(0, M))
            z_i = inner_solve(inst, i, price[inst.agent_slice(i)])
            theta, P = apps.dcopf_inner_closed_form(recs[i], nu, mu)
            closed = np.array([theta] if P is None else [theta, P])
            worst_pair = max(worst_pair, float(np.max(np.abs(closed - z_i))))
            z_ref = inner_solve_bruteforce(
                inst.objectives[i], price[inst.agent_slice(i)], tol=1e-10)
            worst_brute = max(worst_brute, float(np.max(np.abs(closed - z_ref))))
    inner_ok = worst_pair <= 1e-10 and worst_brute <= 1e-8

    lemma_failures = []
    for name, (inst, ref) in suite_instances.items():
        results = {r.name: r for r in
                   check_sampled_inequalities(inst, ref, pairs=200)}
        for key in ("descent-lemma", "distance-lemma"):
            if not results[key].passed:
                lemma_failures.append(f"{name}:{key} ({results[key].detail})")
    ok = inner_ok and not lemma_failures
    _report(7, "oracle correctness", ok,
            f"closed-form vs generic {worst_pair:.2e} (<=1e-10), vs brute force "
            f"{worst_brute:.2e} (<=1e-8); lemma checks on 200 pairs x 5 instances"
            + (f"; failures: {lemma_failures}" if lemma_failures else ""))
    assert ok, (worst_pair, worst_brute, lemma_failures)


TABLE1 = {
    "case9": (9, 3, 9, 12, 9, 18),
    "case14": (14, 5, 20, 19, 14, 40),
    "case30": (30, 6, 41, 36, 30, 82),
    "case39": (39, 10, 46, 49, 39, 92),
}


def test_criterion_8_parser_dimensions():
    rows = []
    ok = True
    for name, (mb, mg, ml, n, p, q) in TABLE1.items():
        case = load_case(name)
        inst = apps.build_dcopf(case)
        got = (case.num_buses, case.num_generators, case.num_branches,
               inst.n, inst.p, inst.q)
        good = got == (mb, mg, ml, n, p, q)
        ok = ok and good
        rows.append(f"{name}: {got} {'ok' if good else 'MISMATCH'}")
    _report(8, "parser and builder dimensions", ok, "; ".join(rows))
    assert ok, rows
