"""Oracle backend selection: compiled kernel when available, numpy otherwise.

Algorithm drivers talk to a small interface — ``eval(lam_packed)`` for one
dual-oracle sweep and ``fvalue(z)`` for the objective — and never care which
implementation is underneath.  The compiled backend handles instances whose
objectives all have closed-form inner solves (quadratic / quadratic-log);
anything with callback objectives falls back to the numpy path.

Selection order for ``backend="auto"``: the ``DUALDECOMP_BACKEND``
environment variable if set, else compiled when importable and supported,
else python.
"""

import os

import numpy as np

from . import model, oracle
from .errors import DualDecompError, NoRootInDomain

try:
    from . import _kernel

    HAVE_KERNEL = True
except ImportError:  # pragma: no cover - environment without the extension
    _kernel = None
    HAVE_KERNEL = False

_BACKEND_ENV = "DUALDECOMP_BACKEND"


class PythonOracle:
    """Reference numpy implementation (delegates to :mod:`dualdecomp.oracle`)."""

    name = "python"

    def __init__(self, instance):
        self.instance = instance

    def eval(self, lam_packed):
        """One oracle sweep at a packed multiplier already in the dual domain."""
        inst = self.instance
        lam = oracle.DualPoint(lam_packed[: inst.p], lam_packed[inst.p :])
        d, grad, z = oracle.dual_value_grad(inst, lam)
        return d, np.concatenate([grad.nu, grad.mu]), z

    def fvalue(self, z):
        return model.objective_value(self.instance, z)


class CompiledOracle:
    name = "compiled"

    def __init__(self, instance):
        self.instance = instance
        self._k = _kernel.KernelOracle(flatten_instance(instance))
        self._z = np.empty(instance.n)
        self._g = np.empty(instance.p + instance.q)

    def eval(self, lam_packed):
        inst = self.instance
        lam_packed = np.ascontiguousarray(lam_packed, dtype=float)
        try:
            d = self._k.eval(
                lam_packed[: inst.p],
                lam_packed[inst.p :],
                self._z,
                self._g[: inst.p],
                self._g[inst.p :],
            )
        except ValueError as exc:
            raise NoRootInDomain(str(exc)) from exc
        return d, self._g.copy(), self._z.copy()

    def fvalue(self, z):
        return self._k.fvalue(np.ascontiguousarray(z, dtype=float))


def kernel_supported(instance):
    """Whether every objective has a closed-form inner solve."""
    return all(o.kind in ("quadratic", "quadratic_log") for o in instance.objectives)


def flatten_instance(instance):
    """Pack an instance into the flat arrays the kernel consumes."""
    if not kernel_supported(instance):
        raise DualDecompError("instance has callback objectives; kernel unsupported")
    M = instance.structure.num_agents
    Mbar = instance.structure.num_blocks
    qdiag = np.empty(instance.n)
    zref = np.empty(instance.n)
    lo = np.empty(instance.n)
    hi = np.empty(instance.n)
    kind = np.zeros(M, dtype=np.int32)
    gamma = np.zeros(M)
    beta = np.ones(M)
    logpos = np.full(M, -1, dtype=np.int64)
    for i, obj in enumerate(instance.objectives):
        sl = instance.agent_slice(i)
        qdiag[sl] = obj.qdiag
        zref[sl] = obj.z_ref
        lo[sl] = obj.lo
        hi[sl] = obj.hi
        if obj.kind == "quadratic_log":
            kind[i] = 1
            gamma[i] = obj.gamma
            beta[i] = obj.beta
            logpos[i] = instance.z_off[i] + obj.log_index

    # One canonical edge table in (block, agent) order; the agent-major view
    # references the same data through offset arrays.
    edges = sorted(instance.coupling.blocks.keys())
    adata_parts, cdata_parts = [], []
    aoff, coff = {}, {}
    pos_a = pos_c = 0
    for (j, i) in edges:
        A, C = instance.coupling.blocks[(j, i)]
        aoff[(j, i)] = pos_a
        coff[(j, i)] = pos_c
        adata_parts.append(np.ascontiguousarray(A, dtype=float).ravel())
        cdata_parts.append(np.ascontiguousarray(C, dtype=float).ravel())
        pos_a += A.size
        pos_c += C.size
    adata = np.concatenate(adata_parts) if adata_parts else np.zeros(0)
    cdata = np.concatenate(cdata_parts) if cdata_parts else np.zeros(0)

    b_ptr = np.zeros(Mbar + 1, dtype=np.int64)
    b_agt, b_aoff, b_coff = [], [], []
    for j in range(Mbar):
        for i, _, _ in instance.block_edges[j]:
            b_agt.append(i)
            b_aoff.append(aoff[(j, i)])
            b_coff.append(coff[(j, i)])
        b_ptr[j + 1] = len(b_agt)

    a_ptr = np.zeros(M + 1, dtype=np.int64)
    a_blk, a_aoff, a_coff = [], [], []
    for i in range(M):
        for j, _, _ in instance.agent_edges[i]:
            a_blk.append(j)
            a_aoff.append(aoff[(j, i)])
            a_coff.append(coff[(j, i)])
        a_ptr[i + 1] = len(a_blk)

    def idx(x):
        return np.asarray(x, dtype=np.int64)

    max_ni = max(instance.coupling.agent_dims)
    return {
        "M": M,
        "Mbar": Mbar,
        "n": instance.n,
        "p": instance.p,
        "q": instance.q,
        "z_off": instance.z_off,
        "nu_off": instance.nu_off,
        "mu_off": instance.mu_off,
        "a_ptr": a_ptr,
        "a_blk": idx(a_blk),
        "a_aoff": idx(a_aoff),
        "a_coff": idx(a_coff),
        "b_ptr": b_ptr,
        "b_agt": idx(b_agt),
        "b_aoff": idx(b_aoff),
        "b_coff": idx(b_coff),
        "logpos": logpos,
        "kind": kind,
        "qdiag": qdiag,
        "zref": zref,
        "lo": lo,
        "hi": hi,
        "gamma": gamma,
        "beta": beta,
        "adata": adata,
        "cdata": cdata,
        "b": np.ascontiguousarray(instance.coupling.rhs_eq, dtype=float),
        "c": np.ascontiguousarray(instance.coupling.rhs_ineq, dtype=float),
        "cfinite": instance.finite_ineq.astype(np.uint8),
        "pricebuf": np.zeros(max_ni),
    }


def make_oracle(instance, backend="auto"):
    """Instantiate the oracle backend for an instance.

    ``backend`` is ``"auto"``, ``"python"`` or ``"compiled"``; auto honors
    the ``DUALDECOMP_BACKEND`` environment variable.
    """
    if backend == "auto":
        backend = os.environ.get(_BACKEND_ENV, "auto") or "auto"
    if backend == "auto":
        backend = "compiled" if (HAVE_KERNEL and kernel_supported(instance)) else "python"
    if backend == "compiled":
        if not HAVE_KERNEL:
            raise DualDecompError("compiled backend requested but _kernel is not built")
        return CompiledOracle(instance)
    if backend == "python":
        return PythonOracle(instance)
    raise ValueError(f"unknown backend {backend!r}")
