"""Problem data model.

A problem instance couples ``M`` agents through ``Mbar`` constraint blocks
arranged on a bipartite graph: agent ``i`` owns a variable ``z_i`` of size
``n_i`` and a strongly convex local objective; constraint block ``j`` owns
``p_j`` equality rows and ``q_j`` inequality rows.  Coupling matrices are
stored densely per edge ``(j, i)`` of the bipartite graph, never assembled
globally, so every operator application touches only stored blocks.

Instances are immutable after :func:`build_problem` and safe to share
between worker threads; building itself is single-threaded.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BlockOutsideIncidence,
    DecoupledAgent,
    DimensionMismatch,
    NonPositiveStrongConvexity,
)

__all__ = [
    "BipartiteStructure",
    "BlockCoupling",
    "Quadratic",
    "QuadraticLog",
    "SeparableScalar",
    "ProblemInstance",
    "build_problem",
    "apply_G",
    "apply_G_transpose",
    "objective_value",
    "objective_gradient",
]


def _as_1d(x, name):
    a = np.asarray(x, dtype=float)
    if a.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {a.shape}")
    return a


class BipartiteStructure:
    """Bipartite agent/constraint-block graph.

    Parameters
    ----------
    num_agents : int
        Number of agents ``M``.
    num_blocks : int
        Number of constraint blocks ``Mbar``.
    incidence : array_like of bool, shape (Mbar, M)
        ``incidence[j, i]`` is True when agent ``i`` participates in
        constraint block ``j``.
    """

    def __init__(self, num_agents, num_blocks, incidence):
        incidence = np.asarray(incidence, dtype=bool)
        if incidence.shape != (num_blocks, num_agents):
            raise DimensionMismatch(
                f"incidence shape {incidence.shape} does not match "
                f"(Mbar, M) = ({num_blocks}, {num_agents})"
            )
        self.num_agents = int(num_agents)
        self.num_blocks = int(num_blocks)
        self.incidence = incidence
        self.incidence.setflags(write=False)
        # Derived neighbor families; mutually consistent by construction.
        self.agent_neighbors = [np.flatnonzero(incidence[:, i]) for i in range(num_agents)]
        self.block_neighbors = [np.flatnonzero(incidence[j, :]) for j in range(num_blocks)]

    def __repr__(self):
        edges = int(self.incidence.sum())
        return f"BipartiteStructure(M={self.num_agents}, Mbar={self.num_blocks}, edges={edges})"


class BlockCoupling:
    """Block-sparse coupling operators and right-hand sides.

    ``blocks`` maps an edge ``(j, i)`` to a pair ``(A_ji, C_ji)`` where
    ``A_ji`` has shape ``(p_j, n_i)`` and ``C_ji`` has shape ``(q_j, n_i)``.
    Either entry may be None; it is then materialized as an explicit zero
    block of the right shape (zero blocks on genuine edges are legal and are
    kept verbatim, since pruning them would change the block neighborhoods
    and hence the weight matrix).
    """

    def __init__(self, agent_dims, eq_dims, ineq_dims, blocks, rhs_eq, rhs_ineq):
        self.agent_dims = [int(v) for v in agent_dims]
        self.eq_dims = [int(v) for v in eq_dims]
        self.ineq_dims = [int(v) for v in ineq_dims]
        self.blocks = {}
        for (j, i), pair in blocks.items():
            if isinstance(pair, np.ndarray):
                pair = (pair, None)
            A, C = pair
            self.blocks[(int(j), int(i))] = (A, C)
        self.rhs_eq = _as_1d(rhs_eq, "rhs_eq")
        self.rhs_ineq = _as_1d(rhs_ineq, "rhs_ineq")


class _Objective:
    """Common behavior of local objectives: a box and convexity constants."""

    def __init__(self, n, lo, hi, sigma, lipschitz):
        self.n = int(n)
        self.lo = np.full(self.n, -np.inf) if lo is None else _as_1d(lo, "lo")
        self.hi = np.full(self.n, np.inf) if hi is None else _as_1d(hi, "hi")
        if self.lo.shape != (self.n,) or self.hi.shape != (self.n,):
            raise DimensionMismatch("box bounds must match the objective dimension")
        if np.any(self.lo > self.hi):
            raise DimensionMismatch("empty box: lo > hi on some coordinate")
        self.sigma = float(sigma)
        self.lipschitz = None if lipschitz is None else float(lipschitz)

    def validate(self):
        if not self.sigma > 0.0:
            raise NonPositiveStrongConvexity(
                f"strong convexity must be positive, got {self.sigma}"
            )
        if self.lipschitz is not None and self.lipschitz < self.sigma:
            raise DimensionMismatch("declared gradient Lipschitz constant below sigma")


class Quadratic(_Objective):
    """f(z) = 1/2 * sum_c q_c (z_c - ref_c)^2 over a coordinate box."""

    kind = "quadratic"

    def __init__(self, qdiag, z_ref, lo=None, hi=None):
        qdiag = _as_1d(qdiag, "qdiag")
        z_ref = _as_1d(z_ref, "z_ref")
        if qdiag.shape != z_ref.shape:
            raise DimensionMismatch("qdiag and z_ref must have the same length")
        if np.any(qdiag <= 0):
            raise NonPositiveStrongConvexity("quadratic weights must be positive")
        super().__init__(qdiag.size, lo, hi, float(qdiag.min()), float(qdiag.max()))
        self.qdiag = qdiag
        self.z_ref = z_ref

    def value(self, z):
        dz = z - self.z_ref
        return 0.5 * float(np.dot(self.qdiag * dz, dz))

    def gradient(self, z):
        return self.qdiag * (z - self.z_ref)


class QuadraticLog(_Objective):
    """Diagonal quadratic minus a log barrier-style reward on one coordinate.

    f(z) = 1/2 * sum_c q_c (z_c - ref_c)^2 - gamma * log(beta + z_L)

    with ``L = log_index``.  The box must keep the log argument at least
    ``beta/2`` (i.e. ``lo[L] >= -beta/2``) so the term stays finite and the
    gradient bounded on the feasible set.
    """

    kind = "quadratic_log"

    def __init__(self, qdiag, z_ref, gamma, beta, log_index, lo=None, hi=None):
        qdiag = _as_1d(qdiag, "qdiag")
        z_ref = _as_1d(z_ref, "z_ref")
        if qdiag.shape != z_ref.shape:
            raise DimensionMismatch("qdiag and z_ref must have the same length")
        if np.any(qdiag <= 0):
            raise NonPositiveStrongConvexity("quadratic weights must be positive")
        if not (gamma > 0 and beta > 0):
            raise NonPositiveStrongConvexity("gamma and beta must be positive")
        log_index = int(log_index)
        if not 0 <= log_index < qdiag.size:
            raise DimensionMismatch("log_index outside the coordinate range")
        # The log term is convex on the domain, so min(qdiag) remains a valid
        # strong convexity constant.
        super().__init__(qdiag.size, lo, hi, float(qdiag.min()), None)
        if self.lo[log_index] < -beta / 2.0:
            raise DimensionMismatch(
                "box must keep the log argument at least beta/2 "
                f"(lo[{log_index}] = {self.lo[log_index]}, beta = {beta})"
            )
        self.qdiag = qdiag
        self.z_ref = z_ref
        self.gamma = float(gamma)
        self.beta = float(beta)
        self.log_index = log_index
        # Gradient Lipschitz constant over the box, when the log coordinate
        # is bounded away from -beta.
        lo_log = self.lo[log_index]
        if lo_log > -beta:
            self.lipschitz = float(qdiag.max() + self.gamma / (self.beta + lo_log) ** 2)

    def value(self, z):
        dz = z - self.z_ref
        return 0.5 * float(np.dot(self.qdiag * dz, dz)) - self.gamma * np.log(
            self.beta + z[self.log_index]
        )

    def gradient(self, z):
        g = self.qdiag * (z - self.z_ref)
        g[self.log_index] -= self.gamma / (self.beta + z[self.log_index])
        return g


class SeparableScalar(_Objective):
    """Coordinate-separable objective given by value/derivative callbacks.

    Parameters
    ----------
    values, derivs : sequences of callables
        ``values[c](x)`` and ``derivs[c](x)`` evaluate the c-th coordinate
        term and its derivative.
    sigmas : array_like
        Declared strong convexity constant per coordinate (all > 0).
    """

    kind = "separable_scalar"

    def __init__(self, values, derivs, sigmas, lo=None, hi=None, lipschitz=None):
        sigmas = _as_1d(sigmas, "sigmas")
        if len(values) != sigmas.size or len(derivs) != sigmas.size:
            raise DimensionMismatch("callbacks and sigmas must have matching length")
        if np.any(sigmas <= 0):
            raise NonPositiveStrongConvexity("per-coordinate sigma must be positive")
        super().__init__(sigmas.size, lo, hi, float(sigmas.min()), lipschitz)
        self.values = list(values)
        self.derivs = list(derivs)
        self.sigmas = sigmas

    def value(self, z):
        return float(sum(f(x) for f, x in zip(self.values, z)))

    def gradient(self, z):
        return np.array([g(x) for g, x in zip(self.derivs, z)])


@dataclass
class ProblemInstance:
    """Validated problem data plus derived index structures.

    Immutable after construction (by convention: arrays are not written to),
    hence safe for concurrent read access from any number of workers.
    """

    structure: BipartiteStructure
    coupling: BlockCoupling
    objectives: list
    n: int = field(init=False)
    p: int = field(init=False)
    q: int = field(init=False)
    sigma_f: float = field(init=False)

    def __post_init__(self):
        self.n = int(sum(self.coupling.agent_dims))
        self.p = int(sum(self.coupling.eq_dims))
        self.q = int(sum(self.coupling.ineq_dims))
        self.sigma_f = float(min(o.sigma for o in self.objectives))
        self.z_off = np.concatenate(([0], np.cumsum(self.coupling.agent_dims))).astype(np.int64)
        self.nu_off = np.concatenate(([0], np.cumsum(self.coupling.eq_dims))).astype(np.int64)
        self.mu_off = np.concatenate(([0], np.cumsum(self.coupling.ineq_dims))).astype(np.int64)
        # Edge views sorted for deterministic accumulation order: ascending
        # agent id within a block, ascending block id within an agent.
        self.block_edges = [[] for _ in range(self.structure.num_blocks)]
        self.agent_edges = [[] for _ in range(self.structure.num_agents)]
        for j in range(self.structure.num_blocks):
            for i in self.structure.block_neighbors[j]:
                A, C = self.coupling.blocks[(j, int(i))]
                self.block_edges[j].append((int(i), A, C))
        for i in range(self.structure.num_agents):
            for j in self.structure.agent_neighbors[i]:
                A, C = self.coupling.blocks[(int(j), i)]
                self.agent_edges[i].append((int(j), A, C))
        # Inequality rows with infinite right-hand side are vacuous: their
        # multipliers are pinned at zero and their dual gradient component is
        # zero, which keeps every update and inner product finite while
        # preserving the stated dimensions.
        self.finite_ineq = np.isfinite(self.coupling.rhs_ineq)

    # -- slicing helpers ---------------------------------------------------

    def agent_slice(self, i):
        return slice(int(self.z_off[i]), int(self.z_off[i + 1]))

    def nu_slice(self, j):
        return slice(int(self.nu_off[j]), int(self.nu_off[j + 1]))

    def mu_slice(self, j):
        return slice(int(self.mu_off[j]), int(self.mu_off[j + 1]))

    def __repr__(self):
        return (
            f"ProblemInstance(M={self.structure.num_agents}, "
            f"Mbar={self.structure.num_blocks}, n={self.n}, p={self.p}, q={self.q})"
        )


def build_problem(structure, coupling, objectives):
    """Validate and assemble a :class:`ProblemInstance`.

    Checks incidence/block consistency, dimension bookkeeping, strong
    convexity, and that every agent is coupled.  Edges whose matrices were
    not supplied get explicit zero blocks.

    Raises
    ------
    DimensionMismatch, BlockOutsideIncidence, NonPositiveStrongConvexity,
    DecoupledAgent
    """
    M, Mbar = structure.num_agents, structure.num_blocks
    if len(coupling.agent_dims) != M:
        raise DimensionMismatch("agent_dims length must equal the number of agents")
    if len(coupling.eq_dims) != Mbar or len(coupling.ineq_dims) != Mbar:
        raise DimensionMismatch("block dims length must equal the number of blocks")
    if len(objectives) != M:
        raise DimensionMismatch("one objective per agent required")

    p, q = sum(coupling.eq_dims), sum(coupling.ineq_dims)
    if coupling.rhs_eq.shape != (p,):
        raise DimensionMismatch(f"rhs_eq has length {coupling.rhs_eq.size}, expected {p}")
    if coupling.rhs_ineq.shape != (q,):
        raise DimensionMismatch(f"rhs_ineq has length {coupling.rhs_ineq.size}, expected {q}")
    if not np.all(np.isfinite(coupling.rhs_eq)):
        raise DimensionMismatch("rhs_eq must be finite")
    if np.any(np.isnan(coupling.rhs_ineq)) or np.any(coupling.rhs_ineq == -np.inf):
        raise DimensionMismatch("rhs_ineq entries must be finite or +inf")

    for i, nbrs in enumerate(structure.agent_neighbors):
        if nbrs.size == 0:
            raise DecoupledAgent(f"agent {i} participates in no constraint block")

    normalized = {}
    for (j, i), (A, C) in coupling.blocks.items():
        if not (0 <= j < Mbar and 0 <= i < M):
            raise BlockOutsideIncidence(f"block index ({j}, {i}) out of range")
        if not structure.incidence[j, i]:
            raise BlockOutsideIncidence(
                f"block stored at ({j}, {i}) where the incidence is zero"
            )
        pj, qj, ni = coupling.eq_dims[j], coupling.ineq_dims[j], coupling.agent_dims[i]
        A = np.zeros((pj, ni)) if A is None else np.ascontiguousarray(A, dtype=float)
        C = np.zeros((qj, ni)) if C is None else np.ascontiguousarray(C, dtype=float)
        if A.shape != (pj, ni):
            raise DimensionMismatch(
                f"A block at ({j}, {i}) has shape {A.shape}, expected {(pj, ni)}"
            )
        if C.shape != (qj, ni):
            raise DimensionMismatch(
                f"C block at ({j}, {i}) has shape {C.shape}, expected {(qj, ni)}"
            )
        normalized[(j, i)] = (A, C)
    # Edges present in the incidence but with no supplied block become
    # explicit zero blocks.
    for j in range(Mbar):
        for i in structure.block_neighbors[j]:
            key = (j, int(i))
            if key not in normalized:
                pj, qj, ni = coupling.eq_dims[j], coupling.ineq_dims[j], coupling.agent_dims[i]
                normalized[key] = (np.zeros((pj, ni)), np.zeros((qj, ni)))
    coupling.blocks = normalized

    for i, obj in enumerate(objectives):
        if obj.n != coupling.agent_dims[i]:
            raise DimensionMismatch(
                f"objective {i} has dimension {obj.n}, expected {coupling.agent_dims[i]}"
            )
        obj.validate()

    return ProblemInstance(structure, coupling, list(objectives))


def apply_G(instance, z):
    """Apply the stacked coupling operator: return ``(Az - b, Cz - c)``.

    Only stored blocks are touched; within a block, contributions are
    accumulated in ascending agent id (the same order the message-passing
    simulator uses, so both paths produce identical floating point).

    Inequality rows with infinite right-hand side yield ``-inf`` residuals,
    which is the honest value of ``Cz - c`` there.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (instance.n,):
        raise DimensionMismatch(f"z has shape {z.shape}, expected ({instance.n},)")
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
    r_eq -= instance.coupling.rhs_eq
    r_ineq -= instance.coupling.rhs_ineq
    return r_eq, r_ineq


def apply_G_transpose(instance, lam):
    """Apply the adjoint operator: per-agent prices ``sum_j A_ji^T nu_j + C_ji^T mu_j``.

    ``lam`` is anything with ``nu``/``mu`` vector attributes (a
    :class:`~dualdecomp.oracle.DualPoint`) or a ``(nu, mu)`` pair.  Each
    agent's slice depends only on the multipliers of its neighboring blocks.
    """
    nu, mu = (lam.nu, lam.mu) if hasattr(lam, "nu") else lam
    nu = np.asarray(nu, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if nu.shape != (instance.p,) or mu.shape != (instance.q,):
        raise DimensionMismatch(
            f"multiplier shapes {nu.shape}, {mu.shape} do not match "
            f"({instance.p},), ({instance.q},)"
        )
    price = np.zeros(instance.n)
    for i in range(instance.structure.num_agents):
        pi = price[instance.agent_slice(i)]
        for j, A, C in instance.agent_edges[i]:
            if A.shape[0]:
                pi += A.T @ nu[instance.nu_slice(j)]
            if C.shape[0]:
                pi += C.T @ mu[instance.mu_slice(j)]
    return price


def objective_value(instance, z):
    """Total objective f(z) = sum_i f_i(z_i)."""
    return float(
        sum(
            obj.value(z[instance.agent_slice(i)])
            for i, obj in enumerate(instance.objectives)
        )
    )


def objective_gradient(instance, z):
    g = np.empty(instance.n)
    for i, obj in enumerate(instance.objectives):
        g[instance.agent_slice(i)] = obj.gradient(z[instance.agent_slice(i)])
    return g
