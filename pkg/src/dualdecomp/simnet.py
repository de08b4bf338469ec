"""Synchronous message-passing simulator for the distributed updates.

Agent nodes and constraint-block nodes exchange messages only along edges of
the bipartite incidence.  A primal round delivers block multipliers to
agents, which solve their local subproblems and reply with their coupling
products; a dual round updates each block's multiplier from the received
products using only block-local data (its own right-hand sides, weight and
accumulator).

Rounds are barriers: within a round node updates are independent and may be
executed in any interleaving, and message delivery between half-rounds is
the synchronization point.  Numerically, every accumulation runs in
ascending node id — the same order the centralized operators use — so a
lockstep run against the centralized driver (python backend) reproduces the
iterates bit for bit.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import oracle
from ._backend import PythonOracle
from .algorithms import dfg_step, dg_step, init_dfg, init_dg
from .errors import ForeignEdge, MissingMessage
from .oracle import WeightMatrix, lipschitz_profile, weight_matrix

__all__ = ["Message", "AgentNode", "BlockNode", "Network", "verify_equivalence",
           "EquivalenceReport"]


@dataclass
class Message:
    agent: int
    block: int
    direction: str  # "agent_to_block" | "block_to_agent"
    payload: object
    round: int


class AgentNode:
    """Holds z_i, the agent's own coupling blocks and its dual Lipschitz constant."""

    def __init__(self, index, objective, edges):
        self.index = index
        self.objective = objective
        self.edges = edges  # ascending block id: list of (j, A_ji, C_ji)
        self.z = None
        self.inbox = {}

    def compute_primal(self, instance):
        price = np.zeros(self.objective.n)
        for j, A, C in self.edges:
            if j not in self.inbox:
                raise MissingMessage(f"agent {self.index} missing multiplier of block {j}")
            nu_j, mu_j = self.inbox[j]
            if A.shape[0]:
                price += A.T @ nu_j
            if C.shape[0]:
                price += C.T @ mu_j
        self.z = oracle.inner_solve(instance, self.index, price)
        return [
            Message(self.index, j, "agent_to_block", (A @ self.z, C @ self.z), -1)
            for j, A, C in self.edges
        ]


class BlockNode:
    """Holds (nu_j, mu_j), the block accumulator and block-local constants."""

    def __init__(self, index, neighbors, b_j, c_j, c_finite, w_j):
        self.index = index
        self.neighbors = list(neighbors)  # ascending agent id
        self.b = b_j
        self.c = c_j
        self.c_finite = c_finite
        self.w = float(w_j)
        p_j, q_j = b_j.size, c_j.size
        self.nu = np.zeros(p_j)
        self.mu = np.zeros(q_j)
        self.S_nu = np.zeros(p_j)
        self.S_mu = np.zeros(q_j)
        self.nu_hat = np.zeros(p_j)
        self.mu_hat = np.zeros(q_j)
        self.inbox = {}

    def _gradient(self):
        g_eq = np.zeros(self.b.size)
        g_in = np.zeros(self.c.size)
        for i in self.neighbors:
            if i not in self.inbox:
                raise MissingMessage(f"block {self.index} missing products of agent {i}")
            Az, Cz = self.inbox[i]
            if g_eq.size:
                g_eq += Az
            if g_in.size:
                g_in += Cz
        g_eq -= self.b
        g_in = np.where(self.c_finite, g_in - self.c, 0.0)
        return g_eq, g_in

    def _project(self, nu, mu):
        mu = np.maximum(mu, 0.0)
        if not self.c_finite.all():
            mu[~self.c_finite] = 0.0
        return nu, mu

    def update_dg(self):
        g_eq, g_in = self._gradient()
        invw = 1.0 / self.w
        self.nu, self.mu = self._project(self.nu + g_eq * invw, self.mu + g_in * invw)

    def update_dfg(self, k):
        g_eq, g_in = self._gradient()
        invw = 1.0 / self.w
        self.nu_hat, self.mu_hat = self._project(self.nu + g_eq * invw,
                                                 self.mu + g_in * invw)
        self.S_nu += ((k + 1) / 2.0) * g_eq
        self.S_mu += ((k + 1) / 2.0) * g_in
        u_nu, u_mu = self._project(self.S_nu * invw, self.S_mu * invw)
        a = (k + 1) / (k + 3)
        bcoef = 2.0 / (k + 3)
        self.nu = a * self.nu_hat + bcoef * u_nu
        self.mu = a * self.mu_hat + bcoef * u_mu

    def update_accumulate(self, k):
        g_eq, g_in = self._gradient()
        self.S_nu += ((k + 1) / 2.0) * g_eq
        self.S_mu += ((k + 1) / 2.0) * g_in


class Network:
    """A bulk-synchronous network of agent and constraint-block nodes."""

    def __init__(self, instance, weights=None, log_messages=False):
        self.instance = instance
        if weights is None:
            weights = weight_matrix(instance, lipschitz_profile(instance)).w
        elif isinstance(weights, WeightMatrix):
            weights = weights.w
        self.agents = [
            AgentNode(i, instance.objectives[i], instance.agent_edges[i])
            for i in range(instance.structure.num_agents)
        ]
        self.blocks = []
        for j in range(instance.structure.num_blocks):
            sl_nu, sl_mu = instance.nu_slice(j), instance.mu_slice(j)
            self.blocks.append(BlockNode(
                j, [i for i, _, _ in instance.block_edges[j]],
                instance.coupling.rhs_eq[sl_nu].copy(),
                instance.coupling.rhs_ineq[sl_mu].copy(),
                instance.finite_ineq[sl_mu].copy(),
                weights[j],
            ))
        self.k = 0  # iteration counter driving the fast-scheme coefficients
        self.round = 0
        self.message_log = [] if log_messages else None
        self.messages_last_round = 0
        # Bootstrap: blocks announce their initial multipliers.
        self._deliver(self._emit_multipliers())

    # -- plumbing ---------------------------------------------------------

    def _emit_multipliers(self):
        out = []
        for blk in self.blocks:
            for i in blk.neighbors:
                out.append(Message(i, blk.index, "block_to_agent",
                                   (blk.nu.copy(), blk.mu.copy()), self.round))
        return out

    def _deliver(self, messages):
        self.messages_last_round = len(messages)
        for msg in messages:
            if not self.instance.structure.incidence[msg.block, msg.agent]:
                raise ForeignEdge(
                    f"message on non-edge (agent {msg.agent}, block {msg.block})"
                )
            if self.message_log is not None:
                payload_norm = float(
                    math.fsum(np.linalg.norm(np.atleast_1d(part)) for part in msg.payload)
                )
                self.message_log.append(
                    {"round": self.round, "agent": msg.agent, "block": msg.block,
                     "direction": msg.direction, "payload_norm": payload_norm}
                )
            if msg.direction == "block_to_agent":
                self.agents[msg.agent].inbox[msg.block] = msg.payload
            else:
                self.blocks[msg.block].inbox[msg.agent] = msg.payload

    def inject(self, message):
        """Inject a message by hand (fault-injection hook)."""
        self._deliver([message])

    def dump_message_log(self, path):
        """Write the round-by-round message log as JSON lines."""
        import json

        with open(path, "w", newline="\n") as fh:
            for rec in self.message_log or []:
                fh.write(json.dumps(rec) + "\n")

    def corrupt_weight(self, j, factor):
        """Fault injection: scale one block weight."""
        self.blocks[j].w *= factor

    # -- rounds -----------------------------------------------------------

    def run_round(self, kind):
        """Execute one half-round of the given kind and deliver its messages.

        ``primal``: agents solve their subproblems from the received block
        multipliers and emit coupling products.  ``dual-dg`` /
        ``dual-dfg``: blocks update multipliers from the received products
        (plain ascent step, or the three-part fast update using the local
        accumulator) and emit them.  ``dual-accumulate`` only folds the
        products into the accumulators.
        """
        self.round += 1
        if kind == "primal":
            out = []
            for agent in self.agents:
                out.extend(agent.compute_primal(self.instance))
            self._deliver(out)
            return self
        if kind == "dual-dg":
            for blk in self.blocks:
                blk.update_dg()
        elif kind == "dual-dfg":
            for blk in self.blocks:
                blk.update_dfg(self.k)
            self.k += 1
        elif kind == "dual-accumulate":
            for blk in self.blocks:
                blk.update_accumulate(self.k)
        else:
            raise ValueError(f"unknown round kind {kind!r}")
        self._deliver(self._emit_multipliers())
        return self

    def seed_phase2(self):
        """Re-seed every block multiplier at its half-step (hybrid phase switch)."""
        for blk in self.blocks:
            blk.nu = blk.nu_hat.copy()
            blk.mu = blk.mu_hat.copy()
        self._deliver(self._emit_multipliers())
        return self

    # -- state accessors ---------------------------------------------------

    def gather_lambda(self):
        nu = np.zeros(self.instance.p)
        mu = np.zeros(self.instance.q)
        for blk in self.blocks:
            nu[self.instance.nu_slice(blk.index)] = blk.nu
            mu[self.instance.mu_slice(blk.index)] = blk.mu
        return np.concatenate([nu, mu])

    def gather_lambda_hat(self):
        nu = np.zeros(self.instance.p)
        mu = np.zeros(self.instance.q)
        for blk in self.blocks:
            nu[self.instance.nu_slice(blk.index)] = blk.nu_hat
            mu[self.instance.mu_slice(blk.index)] = blk.mu_hat
        return np.concatenate([nu, mu])

    def gather_z(self):
        z = np.zeros(self.instance.n)
        for agent in self.agents:
            if agent.z is None:
                raise MissingMessage(f"agent {agent.index} has not solved yet")
            z[self.instance.agent_slice(agent.index)] = agent.z
        return z


@dataclass
class EquivalenceReport:
    method: str
    rounds: int
    max_dev_lambda: float = 0.0
    max_dev_z: float = 0.0
    first_divergence: tuple | None = None  # (round, quantity, deviation)
    tolerance: float = 1e-12

    @property
    def passed(self):
        return max(self.max_dev_lambda, self.max_dev_z) <= self.tolerance


def _rel_dev(a, b):
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / (1.0 + np.abs(b))))


def verify_equivalence(instance, method, rounds, step_mode="distributed",
                       tolerance=1e-12):
    """Run the simulator and the centralized driver in lockstep.

    Compares the multiplier and primal iterates after every (primal, dual)
    round pair; for the hybrid method the phase length is ``rounds // 2`` so
    both phases are exercised.  The centralized reference uses the python
    backend, whose accumulation order matches the simulator exactly.
    """
    profile = lipschitz_profile(instance)
    if step_mode == "centralized":
        from .oracle import global_lipschitz

        W = WeightMatrix.uniform(instance, global_lipschitz(instance))
    else:
        W = weight_matrix(instance, profile)
    net = Network(instance, weights=W)
    backend = PythonOracle(instance)
    report = EquivalenceReport(method=method, rounds=rounds, tolerance=tolerance)

    def compare(rnd, lam_ref, z_ref):
        dev_l = _rel_dev(net.gather_lambda(), lam_ref)
        dev_z = _rel_dev(net.gather_z(), z_ref)
        report.max_dev_lambda = max(report.max_dev_lambda, dev_l)
        report.max_dev_z = max(report.max_dev_z, dev_z)
        if report.first_divergence is None:
            if dev_l > tolerance:
                report.first_divergence = (rnd, "lambda", dev_l)
            elif dev_z > tolerance:
                report.first_divergence = (rnd, "z", dev_z)

    if method == "dfg":
        state = init_dfg(backend, W)
        for r in range(rounds):
            net.run_round("primal")
            net.run_round("dual-dfg")
            dfg_step(state)
            compare(r, state.lam, state.z)
    elif method == "dg":
        state = init_dg(backend, W)
        for r in range(rounds):
            net.run_round("primal")
            net.run_round("dual-dg")
            dg_step(state)
            compare(r, state.lam, state.z)
    elif method == "hdfg":
        k = max(rounds // 2, 1)
        state = init_dfg(backend, W)
        for r in range(k + 1):
            net.run_round("primal")
            net.run_round("dual-dfg")
            dfg_step(state)
            compare(r, state.lam, state.z)
        net.seed_phase2()
        lam = state.lam_hat.copy()
        for r in range(k + 1):
            net.run_round("primal")
            net.run_round("dual-dg")
            d, g, z = backend.eval(lam)
            lam = oracle._project_packed(instance, lam + g * W.inv_diag)
            compare(k + 1 + r, lam, z)
    else:
        raise ValueError(f"unknown method {method!r}")
    return report
