"""Inner subproblem solvers, dual function oracle, and step metric.

The dual function is ``d(nu, mu) = min_z f(z) + <nu, Az-b> + <mu, Cz-c>``;
since every local objective is strongly convex the inner minimizer is unique
and ``grad d = (Az(lam)-b, Cz(lam)-c)``.  Per-agent dual gradients are
Lipschitz with constant ``L_i = ||stacked neighbor blocks||^2 / sigma_i``,
which yields the block-diagonal step metric ``W`` with per-block weight
``w_j = sum of L_i over the block's neighbors``.

``inner_solve`` is a pure function of ``(instance, i, price)``; a driver may
evaluate all agents of one iteration concurrently as long as results are
reduced in the serial (ascending agent id) order, which is what
:func:`dual_value_grad` does.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import model
from .errors import (
    DimensionMismatch,
    EmptyBlockNeighborhood,
    NoRootInDomain,
    NonConvergence,
    PowerIterationStall,
)

__all__ = [
    "DualPoint",
    "WeightMatrix",
    "LipschitzProfile",
    "project_dual",
    "local_lipschitz",
    "global_lipschitz",
    "lipschitz_profile",
    "weight_matrix",
    "inner_solve",
    "dual_value_grad",
]

_SCALAR_TOL = 1e-12
_SCALAR_MAXITER = 200


@dataclass
class DualPoint:
    """Multiplier pair (nu, mu) living in D = R^p x R^q_+."""

    nu: np.ndarray
    mu: np.ndarray

    @classmethod
    def zeros(cls, instance):
        return cls(np.zeros(instance.p), np.zeros(instance.q))

    @classmethod
    def from_packed(cls, instance, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (instance.p + instance.q,):
            raise DimensionMismatch("packed multiplier has the wrong length")
        return cls(vec[: instance.p].copy(), vec[instance.p :].copy())

    def packed(self):
        return np.concatenate([self.nu, self.mu])

    def block(self, instance, j):
        """The pair (nu_j, mu_j) of block j."""
        return self.nu[instance.nu_slice(j)], self.mu[instance.mu_slice(j)]

    def copy(self):
        return DualPoint(self.nu.copy(), self.mu.copy())


class WeightMatrix:
    """Block-diagonal step metric: weight ``w_j`` on every coordinate of block j."""

    def __init__(self, instance, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (instance.structure.num_blocks,):
            raise DimensionMismatch("one weight per constraint block required")
        if np.any(w <= 0):
            raise EmptyBlockNeighborhood(
                "every block needs a positive weight (a neighbor with positive "
                "dual Lipschitz constant)"
            )
        self.w = w
        self.diag_nu = np.repeat(w, instance.coupling.eq_dims)
        self.diag_mu = np.repeat(w, instance.coupling.ineq_dims)
        self.diag = np.concatenate([self.diag_nu, self.diag_mu])
        self.inv_diag = 1.0 / self.diag
        self.w_min = float(w.min())

    @classmethod
    def uniform(cls, instance, scale):
        """The scalar metric ``scale * I`` used by centralized step modes."""
        return cls(instance, np.full(instance.structure.num_blocks, float(scale)))

    def norm(self, vec):
        """Weighted norm ||vec||_W of a packed (p+q) vector."""
        vec = np.asarray(vec, dtype=float)
        return float(np.sqrt(np.dot(self.diag * vec, vec)))

    def inv_norm(self, vec):
        """Weighted norm ||vec||_{W^-1} of a packed (p+q) vector."""
        vec = np.asarray(vec, dtype=float)
        return float(np.sqrt(np.dot(vec * self.inv_diag, vec)))

    def scale_inv(self, vec):
        """W^{-1} vec for a packed vector."""
        return vec * self.inv_diag


@dataclass
class LipschitzProfile:
    """Per-agent dual gradient Lipschitz constants and the global one."""

    per_agent: np.ndarray
    sigma_f: float
    L_d: float | None = None


def project_dual(lam):
    """Euclidean projection onto D: nu unchanged, mu clipped at zero.

    Because the step metric is diagonal and D is a coordinate box, this
    coincides with the W-weighted projection for any W used here.
    """
    return DualPoint(lam.nu.copy(), np.maximum(lam.mu, 0.0))


def _project_packed(instance, vec):
    """In-place projection of a packed multiplier onto the dual domain.

    Also pins multipliers of vacuous (infinite right-hand side) inequality
    rows at zero, i.e. projects onto the effective domain of d.
    """
    mu = vec[instance.p :]
    np.maximum(mu, 0.0, out=mu)
    if not instance.finite_ineq.all():
        mu[~instance.finite_ineq] = 0.0
    return vec


def _power_iteration(matvec, dim, rtol, max_iter):
    """Largest eigenvalue of a PSD operator by power iteration.

    Deterministic: starts from the all-ones vector (with a tiny fixed-seed
    perturbation so a start exactly orthogonal to the top eigenspace cannot
    occur).
    """
    if dim == 0:
        return 0.0
    v = np.ones(dim) + 1e-6 * np.random.default_rng(0).standard_normal(dim)
    v /= np.linalg.norm(v)
    theta = 0.0
    for _ in range(max_iter):
        Av = matvec(v)
        theta_new = float(np.dot(v, Av))
        nrm = np.linalg.norm(Av)
        if nrm == 0.0:
            return 0.0
        v = Av / nrm
        if abs(theta_new - theta) <= rtol * max(abs(theta_new), 1e-300):
            return theta_new
        theta = theta_new
    raise PowerIterationStall(
        f"power iteration did not reach relative tolerance {rtol} "
        f"within {max_iter} iterations"
    )


def _stacked_gram(instance, i):
    """Gram matrix of the vertically stacked neighbor blocks of agent i."""
    ni = instance.coupling.agent_dims[i]
    gram = np.zeros((ni, ni))
    for _, A, C in instance.agent_edges[i]:
        if A.shape[0]:
            gram += A.T @ A
        if C.shape[0]:
            gram += C.T @ C
    return gram


def local_lipschitz(instance, i, rtol=1e-12, max_iter=10_000):
    """Dual gradient Lipschitz constant of agent i.

    Squared spectral norm of the stack of the agent's neighbor blocks
    ``[A_ji; C_ji], j in N_i`` divided by ``sigma_i``.
    """
    gram = _stacked_gram(instance, i)
    lam_max = _power_iteration(lambda v: gram @ v, gram.shape[0], rtol, max_iter)
    return lam_max / instance.objectives[i].sigma


def global_lipschitz(instance, rtol=1e-10, max_iter=10_000):
    """Global dual gradient Lipschitz constant ``||G||^2 / sigma_f``.

    The squared spectral norm is computed by power iteration on ``G^T G``
    applied block-sparsely (never assembling G).
    """

    def gram_mv(v):
        r_eq, r_ineq = _apply_operator(instance, v)
        return model.apply_G_transpose(instance, (r_eq, r_ineq))

    lam_max = _power_iteration(gram_mv, instance.n, rtol, max_iter)
    return lam_max / instance.sigma_f


def lipschitz_profile(instance, include_global=False):
    per_agent = np.array(
        [local_lipschitz(instance, i) for i in range(instance.structure.num_agents)]
    )
    L_d = global_lipschitz(instance) if include_global else None
    return LipschitzProfile(per_agent, instance.sigma_f, L_d)


def weight_matrix(instance, profile):
    """Block-diagonal W with ``w_j = sum of L_i over the block's neighbors``."""
    w = np.zeros(instance.structure.num_blocks)
    for j in range(instance.structure.num_blocks):
        nbrs = instance.structure.block_neighbors[j]
        if nbrs.size == 0:
            raise EmptyBlockNeighborhood(f"constraint block {j} has no neighbors")
        acc = 0.0
        for i in nbrs:
            acc += profile.per_agent[int(i)]
        w[j] = acc
    return WeightMatrix(instance, w)


def _apply_operator(instance, z):
    """(Az, Cz) without the right-hand sides, block-sparsely."""
    r_eq = np.zeros(instance.p)
    r_ineq = np.zeros(instance.q)
    for j in range(instance.structure.num_blocks):
        seq = r_eq[instance.nu_slice(j)]
        sineq = r_ineq[instance.mu_slice(j)]
        for i, A, C in instance.block_edges[j]:
            zi = z[instance.agent_slice(i)]
            if A.shape[0]:
                seq += A @ zi
            if C.shape[0]:
                sineq += C @ zi
    return r_eq, r_ineq


# -- inner subproblems ---------------------------------------------------


def _quadratic_log_root(p, pref, gamma, beta, a):
    """Positive-branch root of ``p (x - pref)(beta + x) + a (beta + x) - gamma = 0``.

    The equation is the stationarity condition of the strictly convex scalar
    function ``p/2 (x-pref)^2 - gamma log(beta+x) + a x`` multiplied by the
    positive factor ``beta + x``; exactly one root lies in ``(-beta, inf)``
    and it is the larger root of the quadratic.
    """
    A = p
    B = p * (beta - pref) + a
    C = a * beta - p * pref * beta - gamma
    disc = B * B - 4.0 * A * C
    if disc < 0.0:
        raise NoRootInDomain("discriminant negative in the scalar optimality equation")
    sqrt_disc = np.sqrt(disc)
    if B <= 0.0:
        root = (-B + sqrt_disc) / (2.0 * A)
    else:
        root = (2.0 * C) / (-B - sqrt_disc)
    if not root > -beta:
        raise NoRootInDomain(f"root {root} not above -beta = {-beta}")
    return root


def _solve_scalar(value_fn, deriv_fn, a, lo, hi):
    """Minimize ``value_fn(x) + a*x`` over ``[lo, hi]`` for increasing ``deriv_fn``."""

    def g(x):
        return deriv_fn(x) + a

    if np.isfinite(lo) and g(lo) >= 0.0:
        return lo
    if np.isfinite(hi) and g(hi) <= 0.0:
        return hi
    # Bracket the root of the increasing derivative.
    left = lo if np.isfinite(lo) else None
    right = hi if np.isfinite(hi) else None
    if left is None:
        left = min(right, 0.0) if right is not None else 0.0
        step = 1.0
        for _ in range(_SCALAR_MAXITER):
            if g(left) < 0.0:
                break
            left -= step
            step *= 2.0
        else:
            raise NonConvergence("could not bracket the stationary point from below")
    if right is None:
        right = max(left, 0.0)
        step = 1.0
        for _ in range(_SCALAR_MAXITER):
            if g(right) > 0.0:
                break
            right += step
            step *= 2.0
        else:
            raise NonConvergence("could not bracket the stationary point from above")
    try:
        return float(
            brentq(g, left, right, xtol=_SCALAR_TOL, maxiter=_SCALAR_MAXITER)
        )
    except RuntimeError as exc:
        raise NonConvergence(str(exc)) from exc


def inner_solve(instance, i, price):
    """Unique minimizer of ``f_i(z_i) + <price, z_i>`` over the agent's box."""
    obj = instance.objectives[i]
    price = np.asarray(price, dtype=float)
    if price.shape != (obj.n,):
        raise DimensionMismatch(
            f"price for agent {i} has shape {price.shape}, expected ({obj.n},)"
        )
    if obj.kind == "quadratic":
        z = obj.z_ref - price / obj.qdiag
        return np.clip(z, obj.lo, obj.hi)
    if obj.kind == "quadratic_log":
        z = obj.z_ref - price / obj.qdiag
        k = obj.log_index
        z[k] = _quadratic_log_root(
            obj.qdiag[k], obj.z_ref[k], obj.gamma, obj.beta, price[k]
        )
        return np.clip(z, obj.lo, obj.hi)
    if obj.kind == "separable_scalar":
        return np.array(
            [
                _solve_scalar(obj.values[c], obj.derivs[c], price[c], obj.lo[c], obj.hi[c])
                for c in range(obj.n)
            ]
        )
    raise TypeError(f"unknown objective kind {obj.kind!r}")


_THREADS_ENV = "DUALDECOMP_THREADS"


def _inner_solve_all(instance, price):
    """All inner minimizers at the given price vector, in agent order.

    When ``DUALDECOMP_THREADS`` is set above 1 and the instance carries
    callback objectives (the only kind whose inner solve is expensive),
    agents are solved on a thread pool; results are still reduced in the
    serial agent order, so the outcome is identical to a serial sweep.
    """
    M = instance.structure.num_agents
    threads = int(os.environ.get(_THREADS_ENV, "1") or "1")
    callbacky = any(o.kind == "separable_scalar" for o in instance.objectives)
    z = np.empty(instance.n)
    if threads > 1 and callbacky and M > 1:
        from concurrent.futures import ThreadPoolExecutor

        def work(i):
            return inner_solve(instance, i, price[instance.agent_slice(i)])

        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, zi in enumerate(pool.map(work, range(M))):
                z[instance.agent_slice(i)] = zi
    else:
        for i in range(M):
            z[instance.agent_slice(i)] = inner_solve(
                instance, i, price[instance.agent_slice(i)]
            )
    return z


def dual_value_grad(instance, lam):
    """Dual value, dual gradient and inner minimizer at ``lam``.

    ``lam`` is projected onto the effective dual domain first (mu clipped at
    zero; multipliers of vacuous inequality rows pinned at zero), so the
    function is total.  The gradient component of a vacuous row is reported
    as zero — the value every update formula needs there.

    Returns
    -------
    (d, grad, z) : (float, DualPoint, ndarray)
    """
    lam = project_dual(lam)
    if not instance.finite_ineq.all():
        lam.mu[~instance.finite_ineq] = 0.0
    price = model.apply_G_transpose(instance, lam)
    z = _inner_solve_all(instance, price)
    r_eq, r_ineq = _apply_operator(instance, z)
    r_eq -= instance.coupling.rhs_eq
    r_ineq = np.where(
        instance.finite_ineq, r_ineq - instance.coupling.rhs_ineq, 0.0
    )
    d = (
        model.objective_value(instance, z)
        + float(np.dot(lam.nu, r_eq))
        + float(np.dot(lam.mu, r_ineq))
    )
    return d, DualPoint(r_eq, r_ineq), z
