"""Small built-in instances with known optima (verification and demos)."""

import numpy as np

from . import apps, model
from .oracle import DualPoint

__all__ = ["eq_toy", "ineq_toy", "num_toy", "dcopf_toy", "builtin_instances"]


def eq_toy():
    """One agent, one equality: min 1/2 z^2  s.t.  z = 1.

    Optimum is z* = 1, f* = 1/2, multiplier nu* = -1.
    """
    structure = model.BipartiteStructure(1, 1, [[True]])
    coupling = model.BlockCoupling([1], [1], [0], {(0, 0): (np.array([[1.0]]), None)},
                                  [1.0], [])
    inst = model.build_problem(structure, coupling, [model.Quadratic([1.0], [0.0])])
    info = {
        "fstar": 0.5,
        "zstar": np.array([1.0]),
        "lamstar": DualPoint(np.array([-1.0]), np.zeros(0)),
    }
    return inst, info


def ineq_toy():
    """One agent, one inequality: min 1/2 (z-2)^2  s.t.  z <= 1.

    Optimum is z* = 1, f* = 1/2, multiplier mu* = 1; the dual function is
    d(mu) = mu - mu^2/2.
    """
    structure = model.BipartiteStructure(1, 1, [[True]])
    coupling = model.BlockCoupling([1], [0], [1], {(0, 0): (None, np.array([[1.0]]))},
                                  [], [1.0])
    inst = model.build_problem(structure, coupling, [model.Quadratic([1.0], [2.0])])
    info = {
        "fstar": 0.5,
        "zstar": np.array([1.0]),
        "lamstar": DualPoint(np.zeros(0), np.array([1.0])),
    }
    return inst, info


def num_toy():
    """Two sources sharing one unit-capacity link, utilities 1/2 (z_i - 1)^2.

    Stationarity gives z_i = 1 - mu; the active link then forces
    2 (1 - mu) = 1, so z* = (1/2, 1/2), mu* = 1/2 and f* = 1/4.
    """
    utilities = [
        model.Quadratic([1.0], [1.0], lo=[0.0], hi=[1.0]),
        model.Quadratic([1.0], [1.0], lo=[0.0], hi=[1.0]),
    ]
    inst = apps.build_num([1.0], [[True, True]], utilities=utilities,
                          rate_caps=[1.0, 1.0])
    info = {
        "fstar": 0.25,
        "zstar": np.array([0.5, 0.5]),
        "lamstar": DualPoint(np.zeros(0), np.array([0.5])),
    }
    return inst, info


def num_toy_log():
    """Two sources, one unit link, the default quadratic-plus-log utilities.

    Smooth and strongly convex with a genuinely nonlinear price response, so
    plain dual ascent approaches the optimum along a geometric tail (unlike
    the purely quadratic toy, which ends in finitely many steps).
    """
    inst = apps.build_num([1.0], [[True, True]], rate_caps=[1.0, 1.0])
    return inst, {}


def dcopf_toy():
    """Two buses, one branch, one generator feeding a remote unit load."""
    case = apps.PowerSystemCase(
        base_mva=100.0,
        buses=[apps.Bus(1, 0.0), apps.Bus(2, 1.0)],
        generators=[apps.Generator(1, 0.0, 3.0)],
        branches=[apps.Branch(1, 2, 0.1, -2.0, 2.0)],
    )
    inst = apps.build_dcopf(case)
    return inst, {"case": case}


def builtin_instances():
    """Name -> (instance, info) for the analytic verification suite."""
    return {
        "eq_toy": eq_toy(),
        "ineq_toy": ineq_toy(),
        "num_toy": num_toy(),
        "dcopf_toy": dcopf_toy(),
    }
