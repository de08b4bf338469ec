"""Distributed dual (fast) gradient methods for separable convex problems.

Solvers with per-iteration convergence certificates, problem builders for DC
optimal power flow (MATPOWER case files) and network utility maximization,
and a synchronous message-passing simulator reproducing the centralized
iterates from purely local updates.
"""

from ._backend import HAVE_KERNEL, make_oracle
from .algorithms import SolverConfig, SolverTrace, dfg_step, dg_step, hdfg_run, solve
from .apps import CostParams, build_dcopf, build_num, parse_matpower
from .model import (
    BipartiteStructure,
    BlockCoupling,
    ProblemInstance,
    Quadratic,
    QuadraticLog,
    SeparableScalar,
    apply_G,
    apply_G_transpose,
    build_problem,
)
from .oracle import (
    DualPoint,
    WeightMatrix,
    dual_value_grad,
    global_lipschitz,
    inner_solve,
    lipschitz_profile,
    local_lipschitz,
    project_dual,
    weight_matrix,
)
from .reference import ReferenceSolution, reference_solve

__version__ = "0.1.0"

__all__ = [
    "BipartiteStructure",
    "BlockCoupling",
    "CostParams",
    "DualPoint",
    "HAVE_KERNEL",
    "ProblemInstance",
    "Quadratic",
    "QuadraticLog",
    "ReferenceSolution",
    "SeparableScalar",
    "SolverConfig",
    "SolverTrace",
    "WeightMatrix",
    "apply_G",
    "apply_G_transpose",
    "build_dcopf",
    "build_num",
    "build_problem",
    "dfg_step",
    "dg_step",
    "dual_value_grad",
    "global_lipschitz",
    "hdfg_run",
    "inner_solve",
    "lipschitz_profile",
    "local_lipschitz",
    "make_oracle",
    "parse_matpower",
    "project_dual",
    "reference_solve",
    "solve",
    "weight_matrix",
]
