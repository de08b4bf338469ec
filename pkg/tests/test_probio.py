import numpy as np
import pytest

from dualdecomp import model, probio
from dualdecomp.errors import DimensionMismatch, DualDecompError

from oracles import dense_assembly, random_instance


def test_roundtrip_random_instance(tmp_path):
    rng = np.random.default_rng(41)
    inst = random_instance(rng, num_agents=4, num_blocks=3, kind="quadratic_log",
                           box=True)
    path = tmp_path / "problem.json"
    probio.save_problem(inst, path)
    back = probio.load_problem(path)
    A1, C1 = dense_assembly(inst)
    A2, C2 = dense_assembly(back)
    np.testing.assert_allclose(A1, A2, atol=0)
    np.testing.assert_allclose(C1, C2, atol=0)
    np.testing.assert_allclose(inst.coupling.rhs_eq, back.coupling.rhs_eq)
    np.testing.assert_allclose(inst.coupling.rhs_ineq, back.coupling.rhs_ineq)
    for a, b in zip(inst.objectives, back.objectives):
        assert a.kind == b.kind
        np.testing.assert_allclose(a.qdiag, b.qdiag)
        np.testing.assert_allclose(a.lo, b.lo)
        np.testing.assert_allclose(a.hi, b.hi)


def test_infinite_entries_roundtrip(tmp_path, toys):
    # Unlimited inequality rows serialize as null and come back as +inf;
    # open box bounds likewise.
    from conftest import load_case
    from dualdecomp import apps

    inst = apps.build_dcopf(load_case("case14"))
    path = tmp_path / "case14.json"
    probio.save_problem(inst, path)
    back = probio.load_problem(path)
    assert np.all(np.isinf(back.coupling.rhs_ineq))
    assert (back.n, back.p, back.q) == (inst.n, inst.p, inst.q)


def test_callback_objectives_not_serializable():
    structure = model.BipartiteStructure(1, 1, [[True]])
    coupling = model.BlockCoupling([1], [1], [0],
                                   {(0, 0): (np.array([[1.0]]), None)}, [1.0], [])
    obj = model.SeparableScalar([lambda x: 0.5 * x * x], [lambda x: x], [1.0])
    inst = model.build_problem(structure, coupling, [obj])
    with pytest.raises(DualDecompError):
        probio.problem_to_dict(inst)


def test_malformed_json_rejected():
    with pytest.raises(DimensionMismatch):
        probio.problem_from_dict({"structure": {"M": 1}})
