import math

import numpy as np
import pytest

from dualdecomp import _backend
from dualdecomp._backend import PythonOracle, kernel_supported, make_oracle
from dualdecomp.algorithms import SolverConfig, solve
from dualdecomp.reference import reference_solve

from oracles import random_instance

needs_kernel = pytest.mark.skipif(not _backend.HAVE_KERNEL,
                                  reason="compiled kernel not built")


def _rel(a, b):
    return np.max(np.abs(a - b) / (1.0 + np.abs(b)))


@needs_kernel
def test_eval_agreement_random_instances():
    rng = np.random.default_rng(31)
    for trial in range(12):
        inst = random_instance(rng, num_agents=4, num_blocks=3,
                               kind="quadratic_log" if trial % 2 else "quadratic",
                               box=(trial % 3 == 0))
        py = PythonOracle(inst)
        cy = make_oracle(inst, "compiled")
        for _ in range(5):
            lam = np.concatenate([
                rng.standard_normal(inst.p),
                np.abs(rng.standard_normal(inst.q)),
            ])
            d1, g1, z1 = py.eval(lam.copy())
            d2, g2, z2 = cy.eval(lam.copy())
            assert abs(d1 - d2) <= 1e-12 * (1 + abs(d1))
            assert _rel(g1, g2) <= 1e-12
            assert _rel(z1, z2) <= 1e-12
            lo = np.concatenate([o.lo for o in inst.objectives])
            hi = np.concatenate([o.hi for o in inst.objectives])
            zq = np.clip(rng.standard_normal(inst.n), lo, hi)
            assert abs(py.fvalue(zq) - cy.fvalue(zq)) <= 1e-12 * (1 + abs(py.fvalue(zq)))


@needs_kernel
def test_eval_agreement_case9(case9_instance):
    inst = case9_instance
    rng = np.random.default_rng(37)
    py = PythonOracle(inst)
    cy = make_oracle(inst, "compiled")
    for _ in range(25):
        lam = np.concatenate([
            3.0 * rng.standard_normal(inst.p),
            3.0 * np.abs(rng.standard_normal(inst.q)),
        ])
        d1, g1, z1 = py.eval(lam.copy())
        d2, g2, z2 = cy.eval(lam.copy())
        assert abs(d1 - d2) <= 1e-12 * (1 + abs(d1))
        assert _rel(g1, g2) <= 1e-12
        assert _rel(z1, z2) <= 1e-12


@needs_kernel
def test_full_runs_agree_across_backends(case9_instance):
    inst = case9_instance
    ref = reference_solve(inst, backend="python")
    cfg = SolverConfig(method="dfg", eps=0.05, max_iters=3000, trace_stride=0,
                       certificates=False)
    t_py = solve(inst, cfg, reference=ref, backend="python")
    t_cy = solve(inst, cfg, reference=ref, backend="compiled")
    assert t_py.termination == t_cy.termination
    assert abs(t_py.iterations - t_cy.iterations) <= 1
    assert abs(t_py.d - t_cy.d) <= 1e-9 * (1 + abs(t_py.d))
    assert _rel(t_py.z, t_cy.z) <= 1e-9


@needs_kernel
def test_vacuous_rows_agree_across_backends():
    # case14 has only unlimited branch ratings: every inequality row is
    # vacuous and must stay pinned at zero on both backends.
    from conftest import load_case
    from dualdecomp import apps

    inst = apps.build_dcopf(load_case("case14"))
    rng = np.random.default_rng(5)
    py = PythonOracle(inst)
    cy = make_oracle(inst, "compiled")
    lam = np.concatenate([rng.standard_normal(inst.p), np.zeros(inst.q)])
    d1, g1, _ = py.eval(lam.copy())
    d2, g2, _ = cy.eval(lam.copy())
    assert math.isfinite(d1) and math.isfinite(d2)
    assert np.all(g1[inst.p:] == 0.0)
    assert np.all(g2[inst.p:] == 0.0)
    assert abs(d1 - d2) <= 1e-12 * (1 + abs(d1))


def test_callback_objectives_fall_back_to_python():
    from dualdecomp import model

    structure = model.BipartiteStructure(1, 1, [[True]])
    coupling = model.BlockCoupling([1], [1], [0],
                                   {(0, 0): (np.array([[1.0]]), None)}, [1.0], [])
    obj = model.SeparableScalar([lambda x: 0.5 * x * x], [lambda x: x], [1.0])
    inst = model.build_problem(structure, coupling, [obj])
    assert not kernel_supported(inst)
    assert make_oracle(inst, "auto").name == "python"


def test_backend_env_override(monkeypatch, toys):
    inst, _ = toys["eq"]
    monkeypatch.setenv("DUALDECOMP_BACKEND", "python")
    assert make_oracle(inst, "auto").name == "python"
    monkeypatch.delenv("DUALDECOMP_BACKEND")


@needs_kernel
def test_auto_prefers_compiled(toys):
    inst, _ = toys["eq"]
    assert make_oracle(inst, "auto").name == "compiled"
