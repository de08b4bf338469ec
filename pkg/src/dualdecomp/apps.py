"""Application problem builders.

DC optimal power flow: buses are agents (phase angle, plus generated power
where a generator attaches), per-bus nodal balance rows form the equality
blocks through the weighted graph Laplacian, and each branch contributes a
pair of flow inequality rows.  The branch weight is the susceptance
``1/x`` (B-theta formulation), so the flow through branch ``l = (u, v)`` is
``(theta_u - theta_v) / x_l`` and the balance reads
``B theta - A^g P^g = -P^d``.

Network utility maximization: sources are scalar-rate agents coupled only
through per-link capacity inequalities.

Builders and the parser are pure, single-threaded functions.
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import (
    DimensionMismatch,
    EmptyRoute,
    MalformedMatrix,
    NonPositiveReactance,
    UnknownBusReference,
)
from .oracle import _quadratic_log_root

__all__ = [
    "Bus",
    "Generator",
    "Branch",
    "PowerSystemCase",
    "CostParams",
    "parse_matpower",
    "build_dcopf",
    "dcopf_bus_records",
    "dcopf_inner_closed_form",
    "build_num",
]

DEFAULT_THETA_BOX = (-math.pi / 2.0, math.pi / 2.0)


@dataclass
class Bus:
    bus_id: int
    load: float  # per-unit
    theta_lo: float = DEFAULT_THETA_BOX[0]
    theta_hi: float = DEFAULT_THETA_BOX[1]


@dataclass
class Generator:
    bus_id: int
    pmin: float  # per-unit
    pmax: float


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    reactance: float
    flow_lo: float  # per-unit, -inf when unlimited
    flow_hi: float


@dataclass
class PowerSystemCase:
    base_mva: float
    buses: list
    generators: list
    branches: list

    @property
    def num_buses(self):
        return len(self.buses)

    @property
    def num_generators(self):
        return len(self.generators)

    @property
    def num_branches(self):
        return len(self.branches)


@dataclass
class CostParams:
    """Local cost weights for the power-flow builder.

    ``theta_ref`` defaults to 0 rad and ``pg_ref`` to the midpoint of the
    generator box (both recorded in run manifests for reproducibility).
    """

    q: float = 2.0
    p: float = 10.0
    gamma: float = 2.0
    beta: float = 0.1
    theta_ref: float = 0.0
    pg_ref: float | None = None
    theta_box: tuple | None = None  # overrides the per-bus angle box

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise DimensionMismatch(f"unknown cost-param keys: {sorted(extra)}")
        params = cls(**data)
        if params.theta_box is not None:
            params.theta_box = (float(params.theta_box[0]), float(params.theta_box[1]))
        return params


# -- MATPOWER case parsing -------------------------------------------------

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.DOTALL)
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([0-9eE.+-]+)\s*;")


def _strip_comments(text):
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_matrix(body, name, min_cols):
    rows = []
    ncols = None
    for chunk in body.replace("\n", ";").split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            row = [float(tok) for tok in chunk.split()]
        except ValueError as exc:
            raise MalformedMatrix(f"{name}: non-numeric entry in row {chunk!r}") from exc
        if ncols is None:
            ncols = len(row)
        elif len(row) != ncols:
            raise MalformedMatrix(
                f"{name}: row with {len(row)} columns, expected {ncols}"
            )
        rows.append(row)
    if not rows:
        raise MalformedMatrix(f"{name}: empty matrix")
    if ncols < min_cols:
        raise MalformedMatrix(f"{name}: {ncols} columns, need at least {min_cols}")
    return np.array(rows)


def parse_matpower(text, theta_box=DEFAULT_THETA_BOX):
    """Parse the bus/gen/branch matrices of a MATPOWER case script.

    Only the columns needed by the power-flow builder are read (bus id and
    load; generator bus and power box; branch endpoints, reactance and
    rating); everything else is ignored.  All powers are converted to per
    unit; a zero rating means an unlimited branch.
    """
    stripped = _strip_comments(text)
    matrices = {m.group(1): m.group(2) for m in _MATRIX_RE.finditer(stripped)}
    for required in ("bus", "gen", "branch"):
        if required not in matrices:
            raise MalformedMatrix(f"missing mpc.{required} matrix")
    base = 100.0
    for m in _SCALAR_RE.finditer(stripped):
        if m.group(1) == "baseMVA":
            base = float(m.group(2))
    bus = _parse_matrix(matrices["bus"], "bus", 3)
    gen = _parse_matrix(matrices["gen"], "gen", 10)
    branch = _parse_matrix(matrices["branch"], "branch", 6)

    buses = [
        Bus(bus_id=int(row[0]), load=row[2] / base,
            theta_lo=theta_box[0], theta_hi=theta_box[1])
        for row in bus
    ]
    ids = {b.bus_id for b in buses}
    if len(ids) != len(buses):
        raise MalformedMatrix("duplicate bus ids")

    generators = []
    for row in gen:
        gbus = int(row[0])
        if gbus not in ids:
            raise UnknownBusReference(f"generator references unknown bus {gbus}")
        generators.append(Generator(bus_id=gbus, pmin=row[9] / base, pmax=row[8] / base))

    branches = []
    for row in branch:
        fbus, tbus = int(row[0]), int(row[1])
        for end in (fbus, tbus):
            if end not in ids:
                raise UnknownBusReference(f"branch references unknown bus {end}")
        x = float(row[3])
        if x <= 0.0:
            raise NonPositiveReactance(f"branch ({fbus}, {tbus}) has reactance {x}")
        rate = float(row[5])
        hi = rate / base if rate > 0.0 else math.inf
        branches.append(Branch(fbus, tbus, x, -hi, hi))
    return PowerSystemCase(base, buses, generators, branches)


# -- DC-OPF builder ----------------------------------------------------------


def _dcopf_layout(case, params):
    """Index maps, Laplacian and per-agent layout shared by the builders."""
    if params is None:
        params = CostParams()
    M = case.num_buses
    idx = {b.bus_id: i for i, b in enumerate(case.buses)}
    gen_at = {}
    for g in case.generators:
        i = idx[g.bus_id]
        if i in gen_at:
            raise DimensionMismatch(
                f"bus {g.bus_id} hosts more than one generator (unsupported)"
            )
        gen_at[i] = g
    weights = np.array([1.0 / br.reactance for br in case.branches])
    lap = {}  # (row_bus, col_bus) -> entry of the weighted Laplacian
    for l, br in enumerate(case.branches):
        u, v = idx[br.from_bus], idx[br.to_bus]
        if u == v:
            continue
        w = weights[l]
        lap[(u, u)] = lap.get((u, u), 0.0) + w
        lap[(v, v)] = lap.get((v, v), 0.0) + w
        lap[(u, v)] = lap.get((u, v), 0.0) - w
        lap[(v, u)] = lap.get((v, u), 0.0) - w
    neighbors = [set() for _ in range(M)]
    for (r, c) in lap:
        if r != c:
            neighbors[r].add(c)
    if params.theta_box is not None:
        tlo, thi = params.theta_box
    else:
        tlo = thi = None
    return params, idx, gen_at, weights, lap, neighbors, tlo, thi


def build_dcopf(case, params=None):
    """Assemble the power-flow instance of a parsed case.

    Agents are buses (theta, plus generated power on generator buses with a
    quadratic-plus-log objective); constraint blocks are the per-bus balance
    rows followed by per-branch flow pairs, with the bipartite incidence
    derived from the Laplacian sparsity and the branch endpoints.
    """
    params, idx, gen_at, weights, lap, neighbors, tlo, thi = _dcopf_layout(case, params)
    M = case.num_buses
    L = case.num_branches
    Mbar = M + L

    agent_dims = [2 if i in gen_at else 1 for i in range(M)]
    eq_dims = [1] * M + [0] * L
    ineq_dims = [0] * M + [2] * L

    incidence = np.zeros((Mbar, M), dtype=bool)
    blocks = {}
    b_rhs = np.zeros(M)
    for j in range(M):
        bus = case.buses[j]
        b_rhs[j] = -bus.load
        members = sorted({j} | neighbors[j])
        for i in members:
            incidence[j, i] = True
            row = np.zeros((1, agent_dims[i]))
            row[0, 0] = lap.get((j, i), 0.0)
            if i == j and i in gen_at:
                row[0, 1] = -1.0
            blocks[(j, i)] = (row, None)
    c_rhs = np.zeros(2 * L)
    for l, br in enumerate(case.branches):
        j = M + l
        u, v = idx[br.from_bus], idx[br.to_bus]
        w = weights[l]
        c_rhs[2 * l] = br.flow_hi
        c_rhs[2 * l + 1] = -br.flow_lo
        for node, sign in ((u, 1.0), (v, -1.0)):
            incidence[j, node] = True
            C = np.zeros((2, agent_dims[node]))
            if u != v:
                C[0, 0] = sign * w
                C[1, 0] = -sign * w
            blocks[(j, node)] = (None, C)

    structure = model.BipartiteStructure(M, Mbar, incidence)
    coupling = model.BlockCoupling(agent_dims, eq_dims, ineq_dims, blocks,
                                   b_rhs, c_rhs)
    objectives = []
    for i in range(M):
        bus = case.buses[i]
        lo_t = tlo if tlo is not None else bus.theta_lo
        hi_t = thi if thi is not None else bus.theta_hi
        if i in gen_at:
            g = gen_at[i]
            pref = params.pg_ref if params.pg_ref is not None else 0.5 * (g.pmin + g.pmax)
            objectives.append(model.QuadraticLog(
                qdiag=[params.q, params.p],
                z_ref=[params.theta_ref, pref],
                gamma=params.gamma, beta=params.beta, log_index=1,
                lo=[lo_t, g.pmin], hi=[hi_t, g.pmax],
            ))
        else:
            objectives.append(model.Quadratic(
                qdiag=[params.q], z_ref=[params.theta_ref],
                lo=[lo_t], hi=[hi_t],
            ))
    return model.build_problem(structure, coupling, objectives)


@dataclass
class DcopfBusRecord:
    """Neighborhood-local data one bus needs for its closed-form inner solve."""

    index: int
    q: float
    theta_ref: float
    theta_lo: float
    theta_hi: float
    balance_cols: list  # (balance row j, Laplacian entry [B]_{j, index})
    flow_cols: list  # (branch l, signed weight of theta_index in flow l)
    gen: tuple | None = None  # (p, pg_ref, gamma, beta, pmin, pmax)


def dcopf_bus_records(case, params=None):
    params, idx, gen_at, weights, lap, neighbors, tlo, thi = _dcopf_layout(case, params)
    records = []
    for i in range(case.num_buses):
        bus = case.buses[i]
        balance_cols = [
            (j, lap.get((j, i), 0.0)) for j in sorted({i} | neighbors[i])
        ]
        flow_cols = []
        for l, br in enumerate(case.branches):
            u, v = idx[br.from_bus], idx[br.to_bus]
            if u == v:
                continue
            if i == u:
                flow_cols.append((l, weights[l]))
            elif i == v:
                flow_cols.append((l, -weights[l]))
        gen = None
        if i in gen_at:
            g = gen_at[i]
            pref = params.pg_ref if params.pg_ref is not None else 0.5 * (g.pmin + g.pmax)
            gen = (params.p, pref, params.gamma, params.beta, g.pmin, g.pmax)
        records.append(DcopfBusRecord(
            index=i, q=params.q, theta_ref=params.theta_ref,
            theta_lo=tlo if tlo is not None else bus.theta_lo,
            theta_hi=thi if thi is not None else bus.theta_hi,
            balance_cols=balance_cols, flow_cols=flow_cols, gen=gen,
        ))
    return records


def dcopf_inner_closed_form(record, nu, mu):
    """Closed-form (theta, P) of one bus at the given multipliers.

    ``nu`` holds one balance multiplier per bus; ``mu`` holds the stacked
    per-branch pairs (upper, lower).  Only the record's neighborhood entries
    are read.  Must agree with the generic inner solve on the same data: the
    specialized optimality conditions are

        q (theta - theta_ref) + price_theta = 0, then clamp
        p (P - pg_ref) - nu_own - gamma / (beta + P) = 0, then clamp
    """
    a_theta = 0.0
    for j, coeff in record.balance_cols:
        a_theta += coeff * nu[j]
    for l, sw in record.flow_cols:
        a_theta += sw * mu[2 * l] - sw * mu[2 * l + 1]
    theta = record.theta_ref - a_theta / record.q
    theta = min(max(theta, record.theta_lo), record.theta_hi)
    if record.gen is None:
        return theta, None
    p, pref, gamma, beta, pmin, pmax = record.gen
    a_P = -nu[record.index]
    P = _quadratic_log_root(p, pref, gamma, beta, a_P)
    P = min(max(P, pmin), pmax)
    return theta, P


# -- NUM builder -------------------------------------------------------------


def build_num(link_capacities, routes, utilities=None, rate_caps=None,
              sigma=1.0, gamma=1.0, beta=1.0):
    """Network utility maximization instance.

    Sources are scalar agents with rate boxes ``[0, R_i]``; each link j
    couples the sources routed through it by ``sum_i z_i <= cbar_j``.  The
    default utility is the strongly convex decreasing
    ``0.5 sigma (z - R_i)^2 - gamma log(beta + z)``; pass ``utilities`` to
    override per source.
    """
    routes = np.asarray(routes, dtype=bool)
    if routes.ndim != 2:
        raise DimensionMismatch("routes must be a links-by-sources matrix")
    Mbar, M = routes.shape
    caps = np.asarray(link_capacities, dtype=float)
    if caps.shape != (Mbar,):
        raise DimensionMismatch("one capacity per link required")
    if rate_caps is None:
        rate_caps = np.ones(M)
    rate_caps = np.asarray(rate_caps, dtype=float)
    if rate_caps.shape != (M,):
        raise DimensionMismatch("one rate cap per source required")
    for i in range(M):
        if not routes[:, i].any():
            raise EmptyRoute(f"source {i} uses no link")
    for j in range(Mbar):
        if not routes[j, :].any():
            raise EmptyRoute(f"link {j} is used by no source")

    blocks = {}
    one = np.ones((1, 1))
    for j in range(Mbar):
        for i in np.flatnonzero(routes[j]):
            blocks[(j, int(i))] = (None, one)
    structure = model.BipartiteStructure(M, Mbar, routes)
    coupling = model.BlockCoupling(
        agent_dims=[1] * M, eq_dims=[0] * Mbar, ineq_dims=[1] * Mbar,
        blocks=blocks, rhs_eq=np.zeros(0), rhs_ineq=caps,
    )
    if utilities is None:
        utilities = [
            model.QuadraticLog(
                qdiag=[sigma], z_ref=[rate_caps[i]], gamma=gamma, beta=beta,
                log_index=0, lo=[0.0], hi=[rate_caps[i]],
            )
            for i in range(M)
        ]
    return model.build_problem(structure, coupling, utilities)
