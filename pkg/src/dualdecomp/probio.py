"""JSON problem interchange (the CLI's on-disk format).

See ``docs/problem-format.md`` for the schema.  Infinite bounds and
unlimited inequality right-hand sides are encoded as ``null``; coupling
matrices are row-major float lists.  Callback objectives have no JSON
representation and are rejected on save.
"""

import json
import math

import numpy as np

from . import model
from .errors import DimensionMismatch, DualDecompError

__all__ = ["problem_to_dict", "problem_from_dict", "save_problem", "load_problem"]


def _encode_bounds(arr, infinite_sign):
    return [None if not math.isfinite(v) else float(v) for v in arr]


def _decode_bounds(values, infinite, name):
    out = np.array([infinite if v is None else float(v) for v in values])
    return out


def _encode_objective(obj):
    base = {"lo": _encode_bounds(obj.lo, -1), "hi": _encode_bounds(obj.hi, 1)}
    if obj.kind == "quadratic":
        return {"kind": "quadratic", "q": obj.qdiag.tolist(),
                "z_ref": obj.z_ref.tolist(), **base}
    if obj.kind == "quadratic_log":
        return {"kind": "quadratic_log", "q": obj.qdiag.tolist(),
                "z_ref": obj.z_ref.tolist(), "gamma": obj.gamma,
                "beta": obj.beta, "log_index": obj.log_index, **base}
    raise DualDecompError(
        f"objective kind {obj.kind!r} has no JSON representation"
    )


def _decode_objective(rec):
    kind = rec.get("kind")
    lo = _decode_bounds(rec["lo"], -math.inf, "lo") if "lo" in rec else None
    hi = _decode_bounds(rec["hi"], math.inf, "hi") if "hi" in rec else None
    if kind == "quadratic":
        return model.Quadratic(rec["q"], rec["z_ref"], lo=lo, hi=hi)
    if kind == "quadratic_log":
        return model.QuadraticLog(rec["q"], rec["z_ref"], rec["gamma"],
                                  rec["beta"], rec["log_index"], lo=lo, hi=hi)
    raise DimensionMismatch(f"unknown objective kind {kind!r}")


def problem_to_dict(instance):
    incidence = [
        [j, int(i)]
        for j in range(instance.structure.num_blocks)
        for i in instance.structure.block_neighbors[j]
    ]
    blocks = []
    for (j, i) in sorted(instance.coupling.blocks):
        A, C = instance.coupling.blocks[(j, i)]
        blocks.append({
            "j": j, "i": i,
            "A": [float(v) for v in A.ravel()] if A.size else None,
            "C": [float(v) for v in C.ravel()] if C.size else None,
        })
    return {
        "structure": {
            "M": instance.structure.num_agents,
            "Mbar": instance.structure.num_blocks,
            "incidence": incidence,
            "agent_dims": list(instance.coupling.agent_dims),
            "eq_dims": list(instance.coupling.eq_dims),
            "ineq_dims": list(instance.coupling.ineq_dims),
        },
        "blocks": blocks,
        "rhs": {
            "b": instance.coupling.rhs_eq.tolist(),
            "c": [None if not math.isfinite(v) else float(v)
                  for v in instance.coupling.rhs_ineq],
        },
        "objectives": [_encode_objective(o) for o in instance.objectives],
    }


def problem_from_dict(data):
    try:
        s = data["structure"]
        M, Mbar = int(s["M"]), int(s["Mbar"])
        agent_dims = [int(v) for v in s["agent_dims"]]
        eq_dims = [int(v) for v in s["eq_dims"]]
        ineq_dims = [int(v) for v in s["ineq_dims"]]
        incidence = np.zeros((Mbar, M), dtype=bool)
        for j, i in s["incidence"]:
            incidence[int(j), int(i)] = True
        blocks = {}
        for rec in data["blocks"]:
            j, i = int(rec["j"]), int(rec["i"])
            A = rec.get("A")
            C = rec.get("C")
            A = None if A is None else np.asarray(A, dtype=float).reshape(
                eq_dims[j], agent_dims[i])
            C = None if C is None else np.asarray(C, dtype=float).reshape(
                ineq_dims[j], agent_dims[i])
            blocks[(j, i)] = (A, C)
        b = np.asarray(data["rhs"]["b"], dtype=float)
        c = np.array([math.inf if v is None else float(v) for v in data["rhs"]["c"]])
        objectives = [_decode_objective(rec) for rec in data["objectives"]]
    except (KeyError, ValueError, TypeError) as exc:
        raise DimensionMismatch(f"malformed problem JSON: {exc}") from exc
    structure = model.BipartiteStructure(M, Mbar, incidence)
    coupling = model.BlockCoupling(agent_dims, eq_dims, ineq_dims, blocks, b, c)
    return model.build_problem(structure, coupling, objectives)


def save_problem(instance, path):
    with open(path, "w") as fh:
        json.dump(problem_to_dict(instance), fh, indent=1)


def load_problem(path):
    with open(path) as fh:
        return problem_from_dict(json.load(fh))
