"""Invariant and certificate verification suites.

Each check returns a :class:`CheckResult`; a suite is a list of them.  The
checks assert the sampled structural inequalities (descent and distance
lemmas, per-agent Lipschitz continuity, concavity, inner-solve first-order
conditions), the per-iteration certificate bounds of the three schemes, and
the simulator/centralized lockstep equivalence.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import certificates, model, oracle, simnet
from ._backend import make_oracle
from .algorithms import dfg_step, dg_step, hdfg_run, init_dfg, init_dg
from .oracle import DualPoint, lipschitz_profile, weight_matrix

__all__ = [
    "CheckResult",
    "check_sampled_inequalities",
    "check_dfg_certificates",
    "check_hdfg_certificates",
    "check_dg_certificates",
    "check_equivalence",
    "run_suite",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _agent_grad(instance, i, lam):
    """The agent's stacked dual gradient contribution [A_ji z_i; C_ji z_i]."""
    price = np.zeros(instance.coupling.agent_dims[i])
    restriction = []
    for j, A, C in instance.agent_edges[i]:
        nu_j = lam.nu[instance.nu_slice(j)]
        mu_j = lam.mu[instance.mu_slice(j)]
        if A.shape[0]:
            price += A.T @ nu_j
        if C.shape[0]:
            price += C.T @ mu_j
        restriction.append(nu_j)
        restriction.append(mu_j)
    z_i = oracle.inner_solve(instance, i, price)
    parts = []
    for j, A, C in instance.agent_edges[i]:
        parts.append(A @ z_i)
        parts.append(C @ z_i)
    return np.concatenate(parts), np.concatenate(restriction)


def check_sampled_inequalities(instance, reference=None, pairs=200, seed=0,
                               scale=1.0):
    """Sampled structural inequalities on random dual pairs."""
    rng = np.random.default_rng(seed)
    profile = lipschitz_profile(instance)
    W = weight_matrix(instance, profile)
    results = []

    worst_descent = math.inf
    worst_concave = math.inf
    worst_lip = -math.inf
    worst_foc = -math.inf
    worst_dist = math.inf
    for _ in range(pairs):
        lam = certificates.random_dual_point(instance, rng, scale)
        bar = certificates.random_dual_point(instance, rng, scale)
        d1, g1, z1 = oracle.dual_value_grad(instance, lam)
        d2, g2, _ = oracle.dual_value_grad(instance, bar)
        diff = lam.packed() - bar.packed()
        # Descent lemma around bar.
        rhs = d2 + float(np.dot(g2.packed(), diff)) - 0.5 * W.norm(diff) ** 2
        worst_descent = min(worst_descent, (d1 - rhs) / (1.0 + abs(d2)))
        # Concavity at the midpoint.
        mid = DualPoint.from_packed(instance, 0.5 * (lam.packed() + bar.packed()))
        dm, _, _ = oracle.dual_value_grad(instance, mid)
        worst_concave = min(worst_concave,
                            (dm - 0.5 * d1 - 0.5 * d2) / (1.0 + abs(dm)))
        # Per-agent Lipschitz gradients.
        for i in range(instance.structure.num_agents):
            gi1, rest1 = _agent_grad(instance, i, lam)
            gi2, rest2 = _agent_grad(instance, i, bar)
            dl = float(np.linalg.norm(rest1 - rest2))
            if dl > 1e-12:
                ratio = float(np.linalg.norm(gi1 - gi2)) / (
                    profile.per_agent[i] * dl
                )
                worst_lip = max(worst_lip, ratio)
        # Inner-solve first-order conditions (projected gradient residual).
        for i in range(instance.structure.num_agents):
            sl = instance.agent_slice(i)
            price = model.apply_G_transpose(instance, lam)[sl]
            obj = instance.objectives[i]
            zi = z1[sl]
            res = zi - np.clip(zi - (obj.gradient(zi) + price), obj.lo, obj.hi)
            worst_foc = max(worst_foc, float(np.linalg.norm(res)))
        # Distance lemma (needs the reference optimum).
        if reference is not None:
            lhs = 0.5 * instance.sigma_f * float(
                np.linalg.norm(z1 - reference.zstar) ** 2
            )
            worst_dist = min(worst_dist,
                             (reference.fstar - d1 - lhs) / (1.0 + abs(d1)))

    results.append(CheckResult(
        "descent-lemma", worst_descent >= -1e-9,
        f"min normalized slack {worst_descent:.3e} over {pairs} pairs"))
    results.append(CheckResult(
        "concavity", worst_concave >= -1e-9,
        f"min normalized midpoint slack {worst_concave:.3e}"))
    results.append(CheckResult(
        "agent-lipschitz", worst_lip <= 1.0 + 1e-9,
        f"max ratio ||grad diff|| / (L_i ||lam diff||) = {worst_lip:.6f}"))
    results.append(CheckResult(
        "inner-first-order", worst_foc <= 1e-9,
        f"max projected-gradient residual {worst_foc:.3e}"))
    if reference is not None:
        results.append(CheckResult(
            "distance-lemma", worst_dist >= -1e-9,
            f"min normalized slack {worst_dist:.3e}"))
    return results


def check_dfg_certificates(instance, reference, iters=300, backend="auto"):
    """Per-iteration fast-scheme certificates on the averaged primal point."""
    profile = lipschitz_profile(instance)
    W = weight_matrix(instance, profile)
    oracle_backend = make_oracle(instance, backend)
    R = certificates.estimate_R(instance, W, reference.lamstar)
    fstar = reference.fstar
    state = init_dfg(oracle_backend, W)
    worst = {"dual": -math.inf, "feas": -math.inf, "primal_hi": -math.inf,
             "primal_lo": -math.inf, "dist": -math.inf}
    for _ in range(iters):
        k = state.k
        dfg_step(state)
        kk = float(k + 1)
        d_hat, _, _ = oracle_backend.eval(state.lam_hat)
        zhat = state.primal_average()
        f_hat = oracle_backend.fvalue(zhat)
        feas = certificates.feasibility_violation(instance, W, zhat)
        tol = 1e-8 * (1.0 + abs(fstar))
        worst["dual"] = max(worst["dual"],
                            (fstar - d_hat) - 2.0 * R * R / kk**2 - tol)
        worst["feas"] = max(worst["feas"],
                            feas - 8.0 * R / kk**2 - tol)
        worst["primal_hi"] = max(worst["primal_hi"], f_hat - fstar - tol)
        worst["primal_lo"] = max(worst["primal_lo"],
                                 (fstar - f_hat) - 8.0 * R * R / kk**2 - tol)
        if reference.zstar is not None:
            dist = float(np.linalg.norm(zhat - reference.zstar))
            worst["dist"] = max(
                worst["dist"],
                dist - 4.0 * R / (math.sqrt(instance.sigma_f) * kk) - tol)
    return [
        CheckResult("avg-dual-gap-bound", worst["dual"] <= 0,
                    f"max excess {worst['dual']:.3e} over {iters} iterations"),
        CheckResult("avg-feasibility-bound", worst["feas"] <= 0,
                    f"max excess {worst['feas']:.3e}"),
        CheckResult("avg-primal-sign", worst["primal_hi"] <= 0,
                    f"max f(zhat) - f* excess {worst['primal_hi']:.3e}"),
        CheckResult("avg-primal-lower", worst["primal_lo"] <= 0,
                    f"max excess {worst['primal_lo']:.3e}"),
        CheckResult("avg-distance-bound", worst["dist"] <= 0,
                    f"max excess {worst['dist']:.3e}"),
    ]


def check_hdfg_certificates(instance, reference, ks=(8, 32), backend="auto"):
    """Hybrid-scheme certificates at the selected iterate for each phase length."""
    profile = lipschitz_profile(instance)
    W = weight_matrix(instance, profile)
    oracle_backend = make_oracle(instance, backend)
    R = certificates.estimate_R(instance, W, reference.lamstar)
    fstar = reference.fstar
    results = []
    for k in ks:
        res = hdfg_run(oracle_backend, W, k, final_eval=True)
        kk = float(k + 1)
        tol = 1e-8 * (1.0 + abs(fstar))
        gap = fstar - res.d_kstar
        feas = certificates.feasibility_violation(instance, W, res.z_kstar)
        ascent_ok = True
        worst_ascent = math.inf
        d_seq = [(d, ssq) for (_, d, ssq) in res.phase2] + [(res.d_end, None)]
        for idx in range(1, len(d_seq)):
            d_prev, ssq_prev = d_seq[idx - 1]
            d_cur = d_seq[idx][0]
            slack = (d_cur - d_prev - 0.5 * ssq_prev) / (1.0 + abs(d_cur))
            worst_ascent = min(worst_ascent, slack)
            if slack < -1e-10:
                ascent_ok = False
        chain_ok = res.d_kstar >= res.d_seed - 1e-10 * (1.0 + abs(res.d_seed))
        results.append(CheckResult(
            f"hybrid-dual-gap-bound[k={k}]",
            gap <= 2.0 * R * R / kk**2 + tol,
            f"gap {gap:.3e} vs bound {2.0 * R * R / kk**2:.3e}"))
        results.append(CheckResult(
            f"hybrid-feasibility-bound[k={k}]",
            feas <= 2.0 * R / (kk * math.sqrt(kk)) + tol,
            f"feas {feas:.3e} vs bound {2.0 * R / (kk * math.sqrt(kk)):.3e}"))
        results.append(CheckResult(
            f"hybrid-ascent[k={k}]", ascent_ok,
            f"min normalized phase-2 ascent slack {worst_ascent:.3e}"))
        results.append(CheckResult(
            f"hybrid-ascent-chain[k={k}]", chain_ok,
            f"d(selected) - d(seed) = {res.d_kstar - res.d_seed:.3e}"))
    return results


def check_dg_certificates(instance, reference, iters=2000, backend="auto"):
    """Plain-ascent certificates: per-step ascent, multiplier contraction,
    and the gradient-map identity."""
    profile = lipschitz_profile(instance)
    W = weight_matrix(instance, profile)
    oracle_backend = make_oracle(instance, backend)
    state = init_dg(oracle_backend, W)
    lamstar = reference.lamstar.packed()
    worst_ascent = math.inf
    worst_contract = -math.inf
    worst_gradmap = -math.inf
    prev_d = None
    prev_step_sq = None
    prev_dist = W.norm(state.lam - lamstar)
    for it in range(iters):
        lam_before = state.lam.copy()
        dg_step(state)
        if prev_d is not None:
            slack = (state.d - prev_d - 0.5 * prev_step_sq) / (1.0 + abs(state.d))
            worst_ascent = min(worst_ascent, slack)
        dist = W.norm(state.lam - lamstar)
        worst_contract = max(worst_contract, dist - prev_dist)
        prev_dist = dist
        prev_d = state.d
        prev_step_sq = state.step_w**2
        if it < 25:
            gm = certificates.gradient_map(
                instance, W, DualPoint.from_packed(instance, lam_before))
            worst_gradmap = max(
                worst_gradmap,
                abs(W.norm(gm.packed()) - state.step_w) / (1.0 + state.step_w))
    return [
        CheckResult("ascent-lemma", worst_ascent >= -1e-10,
                    f"min normalized slack {worst_ascent:.3e} over {iters} steps"),
        CheckResult("multiplier-contraction", worst_contract <= 1e-10,
                    f"max distance increase {worst_contract:.3e}"),
        CheckResult("gradient-map-identity", worst_gradmap <= 1e-12,
                    f"max relative mismatch {worst_gradmap:.3e}"),
    ]


def check_equivalence(instance, methods=("dfg", "dg", "hdfg"), rounds=50,
                      corrupt_weight=None):
    """Simulator vs centralized lockstep for each method."""
    results = []
    for method in methods:
        if corrupt_weight is None:
            report = simnet.verify_equivalence(instance, method, rounds)
        else:
            # Fault injection: rerun with one corrupted block weight.
            report = _corrupted_equivalence(instance, method, rounds, corrupt_weight)
        dev = max(report.max_dev_lambda, report.max_dev_z)
        detail = f"max relative deviation {dev:.3e} over {rounds} iterations"
        if report.first_divergence is not None:
            rnd, what, d0 = report.first_divergence
            detail += f"; first divergence at round {rnd} ({what}, {d0:.3e})"
        results.append(CheckResult(f"lockstep[{method}]", report.passed, detail))
    return results


def _corrupted_equivalence(instance, method, rounds, corrupt):
    j, factor = corrupt
    profile = lipschitz_profile(instance)
    W = weight_matrix(instance, profile)
    net = simnet.Network(instance, weights=W)
    net.corrupt_weight(j, factor)
    from ._backend import PythonOracle

    backend = PythonOracle(instance)
    report = simnet.EquivalenceReport(method=method, rounds=rounds)
    state = init_dg(backend, W) if method == "dg" else init_dfg(backend, W)
    for r in range(rounds):
        net.run_round("primal")
        net.run_round("dual-dg" if method == "dg" else "dual-dfg")
        (dg_step if method == "dg" else dfg_step)(state)
        dev_l = simnet._rel_dev(net.gather_lambda(), state.lam)
        dev_z = simnet._rel_dev(net.gather_z(), state.z)
        report.max_dev_lambda = max(report.max_dev_lambda, dev_l)
        report.max_dev_z = max(report.max_dev_z, dev_z)
        if report.first_divergence is None and max(dev_l, dev_z) > report.tolerance:
            report.first_divergence = (r, "lambda" if dev_l >= dev_z else "z",
                                       max(dev_l, dev_z))
    return report


def run_suite(instance, reference, dfg_iters=300, dg_iters=2000,
              hdfg_ks=(8, 32), rounds=50, pairs=100, backend="auto",
              corrupt_weight=None):
    """The full invariant suite on one instance."""
    results = []
    results += check_sampled_inequalities(instance, reference, pairs=pairs)
    results += check_dfg_certificates(instance, reference, iters=dfg_iters,
                                      backend=backend)
    results += check_hdfg_certificates(instance, reference, ks=hdfg_ks,
                                       backend=backend)
    results += check_dg_certificates(instance, reference, iters=dg_iters,
                                     backend=backend)
    results += check_equivalence(instance, rounds=rounds,
                                 corrupt_weight=corrupt_weight)
    return results
