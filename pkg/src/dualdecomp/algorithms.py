"""The three dual iteration schemes and the solve driver.

All schemes start from the zero multiplier and ascend the dual with
projected steps scaled by the inverse of a block-diagonal metric W — either
the distributed metric built from per-agent dual Lipschitz constants, or its
centralized scalar counterpart ``L_d * I``:

* fast scheme with primal averaging: gradient half-step to ``lam_hat``, a
  running weighted gradient accumulator, and a convex combination forming
  the next iterate; the averaged primal point carries the O(1/k^2)
  certificates.
* hybrid scheme: a fast phase followed by plain weighted ascent steps,
  returning the ascent iterate with the smallest W-step (certificates on the
  last primal iterate).
* plain weighted projected gradient ascent (linear rate under smoothness).

One logical iteration thread drives a scheme; the inner solves inside one
oracle sweep may fan out but join before the dual update (bulk-synchronous).
Traces are append-only.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import make_oracle
from .errors import MissingReference
from .oracle import (
    DualPoint,
    WeightMatrix,
    _project_packed,
    global_lipschitz,
    lipschitz_profile,
    weight_matrix,
)

__all__ = [
    "SolverConfig",
    "TraceRow",
    "SolverTrace",
    "DfgState",
    "DgState",
    "HdfgResult",
    "init_dfg",
    "init_dg",
    "dfg_step",
    "dg_step",
    "hdfg_run",
    "solve",
]

CONVERGED = "Converged"
MAX_ITERS = "MaxIters"


@dataclass
class SolverConfig:
    """Solver settings.

    ``stop_rule`` is ``"fstar-relative"`` (the benchmark criterion: relative
    suboptimality and weighted feasibility both below ``eps``; needs a
    reference optimal value) or ``"gradmap"`` (self-contained: weighted
    feasibility and gradient-map norm below ``eps``).
    """

    method: str = "dfg"  # dfg | hdfg | dg
    step_mode: str = "distributed"  # distributed | centralized
    eps: float = 0.01
    max_iters: int = 300_000
    hdfg_phase_length: int | None = None  # fixed k; None doubles k per round
    trace_stride: int = 1  # 0 records no rows
    certificates: bool = True  # certificate columns on recorded rows
    stop_rule: str = "fstar-relative"

    def validate(self):
        if self.method not in ("dfg", "hdfg", "dg"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.step_mode not in ("distributed", "centralized"):
            raise ValueError(f"unknown step mode {self.step_mode!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.stop_rule not in ("fstar-relative", "gradmap"):
            raise ValueError(f"unknown stop rule {self.stop_rule!r}")


@dataclass
class TraceRow:
    k: int
    d: float
    f_cand: float
    feas: float
    step_w: float
    gradmap: float
    dual_gap: float = math.nan
    primal_gap: float = math.nan
    dist: float = math.nan
    thm_dual: float = math.nan
    thm_feas: float = math.nan
    thm_primal_low: float = math.nan
    thm_dist: float = math.nan
    kappa_hat: float = math.nan


_CSV_COLUMNS = [
    "k", "d", "f_cand", "feas", "step_w", "gradmap", "dual_gap", "primal_gap",
    "dist", "thm_dual", "thm_feas", "thm_primal_low", "thm_dist", "kappa_hat",
]


@dataclass
class SolverTrace:
    """Per-iteration records plus the final report of one solver run."""

    method: str
    step_mode: str
    rows: list = field(default_factory=list)
    iterations: int = 0
    termination: str = MAX_ITERS
    fstar: float | None = None
    # final answer
    z: np.ndarray | None = None
    lam: DualPoint | None = None
    d: float = math.nan
    f: float = math.nan
    feas: float = math.nan
    best_d: float = -math.inf

    def to_csv(self, path):
        """Write recorded rows as CSV: 17 significant digits, LF endings."""
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(_CSV_COLUMNS) + "\n")
            for r in self.rows:
                vals = [getattr(r, c) for c in _CSV_COLUMNS]
                out = [str(r.k)] + [f"{v:.17g}" for v in vals[1:]]
                fh.write(",".join(out) + "\n")

    def rows_as_dicts(self):
        """Recorded rows as plain dicts (for JSON serialization)."""
        return [{c: getattr(r, c) for c in _CSV_COLUMNS} for r in self.rows]


# -- iterate states ------------------------------------------------------


@dataclass
class DfgState:
    """Fast-scheme state: iterate, half-step, gradient accumulator, primal average.

    Both ``lam`` and ``lam_hat`` stay in the dual domain at all times; the
    averaging weights over the first k iterations sum to one.
    """

    backend: object
    W: WeightMatrix
    k: int
    lam: np.ndarray  # lambda^k, packed
    lam_hat: np.ndarray | None  # half-step of the last completed iteration
    S: np.ndarray  # sum_s (s+1)/2 grad(lambda^s)
    zsum: np.ndarray  # sum_s (s+1) z^s
    z: np.ndarray | None
    d: float = math.nan
    grad: np.ndarray | None = None
    best_d: float = -math.inf
    best_lam: np.ndarray | None = None

    @property
    def instance(self):
        return self.backend.instance

    def primal_average(self):
        """Averaged primal point over the k completed iterations."""
        k = self.k
        return self.zsum * (2.0 / (k * (k + 1.0)))

    def average_residual(self):
        """G zhat - g via the gradient accumulator (vacuous rows stay zero)."""
        k = self.k
        return self.S * (4.0 / (k * (k + 1.0)))


@dataclass
class DgState:
    backend: object
    W: WeightMatrix
    k: int
    lam: np.ndarray
    lam_prev: np.ndarray | None = None
    z: np.ndarray | None = None
    d: float = math.nan
    grad: np.ndarray | None = None
    step_w: float = math.nan
    best_d: float = -math.inf
    best_lam: np.ndarray | None = None

    @property
    def instance(self):
        return self.backend.instance


def init_dfg(backend, W):
    inst = backend.instance
    m = inst.p + inst.q
    return DfgState(
        backend=backend, W=W, k=0, lam=np.zeros(m), lam_hat=None,
        S=np.zeros(m), zsum=np.zeros(inst.n), z=None,
    )


def init_dg(backend, W):
    inst = backend.instance
    return DgState(backend=backend, W=W, k=0, lam=np.zeros(inst.p + inst.q))


def _track_best(state, d, lam):
    if d > state.best_d:
        state.best_d = d
        state.best_lam = lam.copy()


def dfg_step(state):
    """One fast-scheme iteration.

    Evaluates the oracle at lambda^k, forms the projected half-step, updates
    the gradient accumulator and the averaged primal point, and builds
    lambda^{k+1} as the convex combination of the half-step and the
    projected scaled accumulator.
    """
    inst = state.instance
    k = state.k
    d, g, z = state.backend.eval(state.lam)
    state.d, state.grad, state.z = d, g, z
    _track_best(state, d, state.lam)
    lam_hat = _project_packed(inst, state.lam + g * state.W.inv_diag)
    state.S += ((k + 1) / 2.0) * g
    u = _project_packed(inst, state.S * state.W.inv_diag)
    state.lam_hat = lam_hat
    state.lam = ((k + 1) / (k + 3)) * lam_hat + (2.0 / (k + 3)) * u
    state.zsum += (k + 1.0) * z
    state.k = k + 1
    return state


def dg_step(state):
    """One weighted projected-gradient ascent step.

    Records the W-norm of the displacement, which equals the gradient-map
    norm at lambda^k.
    """
    inst = state.instance
    d, g, z = state.backend.eval(state.lam)
    state.d, state.grad, state.z = d, g, z
    _track_best(state, d, state.lam)
    lam_new = _project_packed(inst, state.lam + g * state.W.inv_diag)
    state.step_w = state.W.norm(lam_new - state.lam)
    state.lam_prev = state.lam
    state.lam = lam_new
    state.k += 1
    return state


@dataclass
class HdfgResult:
    """Outcome of one hybrid round with phase length k."""

    k: int
    kstar: int  # index j in [k, 2k] with the smallest W-step (ties: smallest j)
    lam_kstar: np.ndarray
    z_kstar: np.ndarray
    d_kstar: float
    grad_kstar: np.ndarray
    step_sq_kstar: float
    phase2: list  # (j, d_j, step_sq_j) for j = k .. 2k
    evals: int
    d_seed: float = math.nan  # d at the phase-2 seed, i.e. d(hat-lambda^k)
    d_end: float = math.nan  # d at lambda^{2k+1}, filled only on request
    best_d: float = -math.inf
    best_lam: np.ndarray | None = None


def hdfg_run(backend, W, k=None, final_eval=False):
    """Run the hybrid scheme with phase length ``k >= 1``.

    Phase 1 performs k+1 fast-scheme iterations; phase 2 re-seeds at the
    last half-step iterate and performs k+1 weighted ascent steps, returning
    the iterate of the step with the smallest squared W-displacement over
    j in [k, 2k] (ties broken by the smallest index).

    Callable either as ``hdfg_run(backend, W, k)`` or, for convenience, as
    ``hdfg_run(instance, k)`` — the oracle backend and the distributed
    metric are then constructed on the fly.
    """
    if k is None:
        instance, k = backend, W
        backend = make_oracle(instance)
        W = weight_matrix(instance, lipschitz_profile(instance))
    if k < 1:
        raise ValueError("phase length must be at least 1")
    inst = backend.instance
    state = init_dfg(backend, W)
    for _ in range(k + 1):
        dfg_step(state)
    lam = state.lam_hat.copy()
    best_d, best_lam = state.best_d, state.best_lam

    res = HdfgResult(
        k=k, kstar=-1, lam_kstar=None, z_kstar=None, d_kstar=math.nan,
        grad_kstar=None, step_sq_kstar=math.inf, phase2=[], evals=k + 1,
    )
    for j in range(k, 2 * k + 1):
        d, g, z = backend.eval(lam)
        res.evals += 1
        if j == k:
            res.d_seed = d
        if d > best_d:
            best_d, best_lam = d, lam.copy()
        lam_new = _project_packed(inst, lam + g * W.inv_diag)
        diff = lam_new - lam
        step_sq = float(np.dot(W.diag * diff, diff))
        res.phase2.append((j, d, step_sq))
        if step_sq < res.step_sq_kstar:
            res.kstar = j
            res.step_sq_kstar = step_sq
            res.lam_kstar = lam.copy()
            res.z_kstar = z.copy()
            res.d_kstar = d
            res.grad_kstar = g.copy()
        lam = lam_new
    if final_eval:
        # Diagnostic value at the very last iterate (not counted as a solver
        # iteration): lets callers check the ascent of the final step too.
        res.d_end, _, _ = backend.eval(lam)
    res.best_d, res.best_lam = best_d, best_lam
    return res


# -- the solve driver -----------------------------------------------------


def _projected_residual(instance, g):
    """[G z - g]_D: equality part kept, inequality part clipped at zero."""
    r = g.copy()
    np.maximum(r[instance.p :], 0.0, out=r[instance.p :])
    return r


def _rel_gap(f_cand, fstar):
    return abs(f_cand - fstar) / max(abs(fstar), 1e-300)


def solve(instance, config, reference=None, backend="auto", profile=None):
    """Iterate the configured scheme until the stopping criterion or max_iters.

    ``reference`` is a :class:`~dualdecomp.reference.ReferenceSolution` (or
    anything with ``fstar``; optionally ``zstar``/``lamstar``), required for
    the relative-suboptimality stop rule.  The candidate primal point is the
    averaged iterate (fast scheme), the selected last iterate (hybrid), or
    the current inner minimizer (plain ascent).  The feasibility norm in the
    stopping rule is always weighted by the inverse of the distributed
    metric, regardless of step mode, so iteration counts are comparable.

    Runs are deterministic: the same instance and configuration produce
    bit-identical traces.
    """
    config.validate()
    fstar = getattr(reference, "fstar", None) if reference is not None else None
    zstar = getattr(reference, "zstar", None) if reference is not None else None
    lamstar = getattr(reference, "lamstar", None) if reference is not None else None
    if config.stop_rule == "fstar-relative" and fstar is None:
        raise MissingReference(
            "the relative-suboptimality stop rule needs a reference optimal value"
        )

    if profile is None:
        profile = lipschitz_profile(instance)
    W_dist = weight_matrix(instance, profile)
    if config.step_mode == "centralized":
        L_d = profile.L_d if profile.L_d is not None else global_lipschitz(instance)
        W_step = WeightMatrix.uniform(instance, L_d)
    else:
        W_step = W_dist
    W_stop = W_dist
    oracle_backend = make_oracle(instance, backend)

    R = None
    if lamstar is not None and config.certificates:
        lam_packed = lamstar.packed() if hasattr(lamstar, "packed") else np.asarray(lamstar)
        R = W_step.norm(lam_packed)

    trace = SolverTrace(method=config.method, step_mode=config.step_mode, fstar=fstar)
    args = (instance, config, trace, oracle_backend, W_step, W_stop, fstar, zstar)
    if config.method == "dfg":
        _solve_dfg(*args, R=R)
    elif config.method == "dg":
        _solve_dg(*args, lamstar=lamstar)
    else:
        _solve_hdfg(*args)
    return trace


def _finish(trace, termination, iterations, z, lam_packed, instance, d, f, feas, best_d):
    trace.termination = termination
    trace.iterations = iterations
    trace.z = z
    trace.lam = DualPoint.from_packed(instance, lam_packed)
    trace.d = d
    trace.f = f
    trace.feas = feas
    trace.best_d = best_d


def _solve_dfg(instance, config, trace, backend, W_step, W_stop, fstar, zstar, R):
    state = init_dfg(backend, W_step)
    eps = config.eps
    zhat = f_cand = feas = None
    for _ in range(config.max_iters):
        k = state.k
        lam_before = state.lam
        dfg_step(state)
        zhat = state.primal_average()
        f_cand = backend.fvalue(zhat)
        feas = W_stop.inv_norm(_projected_residual(instance, state.average_residual()))
        gradmap = W_step.norm(state.lam_hat - lam_before)
        if config.trace_stride and (k % config.trace_stride == 0):
            row = TraceRow(
                k=k, d=state.d, f_cand=f_cand, feas=feas,
                step_w=W_step.norm(state.lam - lam_before), gradmap=gradmap,
            )
            if fstar is not None:
                row.primal_gap = f_cand - fstar
                if config.certificates:
                    d_hat, _, _ = backend.eval(state.lam_hat)
                    row.dual_gap = fstar - d_hat
            if zstar is not None:
                row.dist = float(np.linalg.norm(zhat - zstar))
            if R is not None:
                kk = float(k + 1)
                row.thm_dual = 2.0 * R * R / kk**2
                row.thm_feas = 8.0 * R / kk**2
                row.thm_primal_low = -8.0 * R * R / kk**2
                row.thm_dist = 4.0 * R / (math.sqrt(instance.sigma_f) * kk)
            trace.rows.append(row)
        if config.stop_rule == "gradmap":
            stopped = feas <= eps and gradmap <= eps
        else:
            stopped = _rel_gap(f_cand, fstar) <= eps and feas <= eps
        if stopped:
            _finish(trace, CONVERGED, state.k, zhat, state.lam_hat, instance,
                    state.d, f_cand, feas, state.best_d)
            return
    _finish(trace, MAX_ITERS, state.k, zhat, state.lam_hat, instance,
            state.d, f_cand, feas, state.best_d)


def _solve_dg(instance, config, trace, backend, W_step, W_stop, fstar, zstar, lamstar):
    state = init_dg(backend, W_step)
    eps = config.eps
    lamstar_packed = None
    if lamstar is not None:
        lamstar_packed = lamstar.packed() if hasattr(lamstar, "packed") else np.asarray(lamstar)
    kappa_hat = math.nan
    f_cand = feas = math.nan
    for _ in range(config.max_iters):
        k = state.k
        dg_step(state)
        f_cand = state.d - float(np.dot(state.lam_prev, state.grad))
        feas = W_stop.inv_norm(_projected_residual(instance, state.grad))
        if lamstar_packed is not None and state.step_w > 1e-14:
            ratio = W_step.norm(state.lam_prev - lamstar_packed) / state.step_w
            kappa_hat = ratio if math.isnan(kappa_hat) else max(kappa_hat, ratio)
        if config.trace_stride and (k % config.trace_stride == 0):
            row = TraceRow(
                k=k, d=state.d, f_cand=f_cand, feas=feas,
                step_w=state.step_w, gradmap=state.step_w, kappa_hat=kappa_hat,
            )
            if fstar is not None:
                row.dual_gap = fstar - state.d
                row.primal_gap = f_cand - fstar
            if zstar is not None:
                row.dist = float(np.linalg.norm(state.z - zstar))
            trace.rows.append(row)
        if config.stop_rule == "gradmap":
            stopped = feas <= eps and state.step_w <= eps
        else:
            stopped = _rel_gap(f_cand, fstar) <= eps and feas <= eps
        if stopped:
            _finish(trace, CONVERGED, state.k, state.z, state.lam_prev, instance,
                    state.d, f_cand, feas, state.best_d)
            return
    _finish(trace, MAX_ITERS, state.k, state.z, state.lam_prev, instance,
            state.d, f_cand, feas, state.best_d)


def _solve_hdfg(instance, config, trace, backend, W_step, W_stop, fstar, zstar):
    """Hybrid driver.

    A fixed phase length runs exactly one round (the scheme's k is chosen a
    priori); without one, the phase length doubles between restarts until
    the stopping criterion holds.  The candidate is the selected iterate
    re-evaluated at every phase-2 checkpoint (the running argmin of the
    W-step norm), so a round can stop partway through its ascent phase.
    Iterations are counted as cumulative oracle evaluations across rounds.
    """
    eps = config.eps
    fixed = config.hdfg_phase_length
    k = fixed if fixed is not None else 1
    total = 0
    best_d = -math.inf
    while True:
        state = init_dfg(backend, W_step)
        for _ in range(k + 1):
            dfg_step(state)
        total += k + 1
        best_d = max(best_d, state.best_d)
        lam = state.lam_hat.copy()
        # Phase 2 with per-checkpoint stopping at the running selection.
        sel = None  # (step_sq, j, lam, z, d, grad)
        stopped = False
        for j in range(k, 2 * k + 1):
            d, g, z = backend.eval(lam)
            total += 1
            best_d = max(best_d, d)
            lam_new = _project_packed(instance, lam + g * W_step.inv_diag)
            diff = lam_new - lam
            step_sq = float(np.dot(W_step.diag * diff, diff))
            if sel is None or step_sq < sel[0]:
                sel = (step_sq, j, lam.copy(), z, d, g)
            if config.trace_stride and (j % config.trace_stride == 0):
                trace.rows.append(TraceRow(
                    k=total, d=d, f_cand=math.nan, feas=math.nan,
                    step_w=math.sqrt(step_sq), gradmap=math.sqrt(step_sq),
                    dual_gap=(fstar - d) if fstar is not None else math.nan,
                ))
            f_cand = sel[4] - float(np.dot(sel[2], sel[5]))
            feas = W_stop.inv_norm(_projected_residual(instance, sel[5]))
            if config.stop_rule == "gradmap":
                stopped = feas <= eps and math.sqrt(sel[0]) <= eps
            else:
                stopped = _rel_gap(f_cand, fstar) <= eps and feas <= eps
            if stopped or total >= config.max_iters:
                break
            lam = lam_new
        if stopped:
            _finish(trace, CONVERGED, total, sel[3], sel[2], instance,
                    sel[4], f_cand, feas, best_d)
            return
        if fixed is not None or total >= config.max_iters:
            _finish(trace, MAX_ITERS, total, sel[3], sel[2], instance,
                    sel[4], f_cand, feas, best_d)
            return
        k *= 2
