import numpy as np
import pytest

from dualdecomp import simnet
from dualdecomp._backend import PythonOracle
from dualdecomp.algorithms import dg_step, init_dg
from dualdecomp.errors import ForeignEdge, MissingMessage
from dualdecomp.oracle import DualPoint, dual_value_grad, lipschitz_profile, weight_matrix


def _net(inst, **kw):
    return simnet.Network(inst, **kw)


def test_single_round_pair_matches_centralized_exactly(toys):
    inst, _ = toys["eq"]
    W = weight_matrix(inst, lipschitz_profile(inst))
    net = _net(inst)
    backend = PythonOracle(inst)
    state = init_dg(backend, W)
    net.run_round("primal")
    net.run_round("dual-dg")
    dg_step(state)
    np.testing.assert_array_equal(net.gather_lambda(), state.lam)
    np.testing.assert_array_equal(net.gather_z(), state.z)


def test_first_primal_round_solves_at_zero(toys):
    inst, _ = toys["dcopf2"]
    net = _net(inst)
    net.run_round("primal")
    _, _, z0 = dual_value_grad(inst, DualPoint(np.zeros(inst.p), np.zeros(inst.q)))
    np.testing.assert_array_equal(net.gather_z(), z0)


def test_foreign_edge_rejected(toys):
    inst, _ = toys["num"]
    net = _net(inst)
    # The NUM toy has a single link block 0 over both sources; an edge to a
    # nonexistent block is foreign.
    inst2, _ = toys["dcopf2"]
    net2 = _net(inst2)
    # block 0 (bus-1 balance) neighbors agents {0, 1}; inject on a non-edge:
    # branch block 2 couples both buses, so fabricate block 1 against agent 0?
    # block 1 is bus-2 balance with neighbors {0, 1} as well; use an
    # out-of-incidence pair from the NUM toy instead: there is none, so build
    # a 2-link chain where link 1 does not touch source 0.
    from dualdecomp import apps

    chain = apps.build_num([1.0, 1.0], [[True, True, False], [False, True, True]],
                           rate_caps=[1.0, 1.0, 1.0])
    net3 = _net(chain)
    msg = simnet.Message(agent=0, block=1, direction="agent_to_block",
                         payload=(np.zeros(0), np.zeros(1)), round=0)
    with pytest.raises(ForeignEdge):
        net3.inject(msg)


def test_missing_message_detected(toys):
    inst, _ = toys["dcopf2"]
    net = _net(inst)
    net.agents[0].inbox.clear()
    with pytest.raises(MissingMessage):
        net.run_round("primal")


def test_message_locality_and_counts(toys):
    inst, _ = toys["dcopf2"]
    net = _net(inst, log_messages=True)
    edges = int(inst.structure.incidence.sum())
    net.message_log.clear()
    net.run_round("primal")
    assert net.messages_last_round == edges
    net.run_round("dual-dfg")
    assert net.messages_last_round == edges
    seen = {(m["block"], m["agent"]) for m in net.message_log}
    allowed = {(j, int(i)) for j in range(inst.structure.num_blocks)
               for i in inst.structure.block_neighbors[j]}
    assert seen == allowed
    # one message per direction per edge across the round pair
    assert len(net.message_log) == 2 * edges


def test_dual_accumulate_round_only_updates_accumulator(toys):
    inst, _ = toys["num"]
    net = _net(inst)
    net.run_round("primal")
    lam_before = net.gather_lambda()
    net.run_round("dual-accumulate")
    np.testing.assert_array_equal(net.gather_lambda(), lam_before)
    assert any(np.any(blk.S_mu != 0) for blk in net.blocks)


@pytest.mark.parametrize("method", ["dfg", "dg", "hdfg"])
def test_equivalence_case9(case9_instance, method):
    report = simnet.verify_equivalence(case9_instance, method, rounds=60)
    assert report.passed, report.first_divergence
    assert report.max_dev_lambda == 0.0  # bitwise lockstep
    assert report.max_dev_z == 0.0


def test_equivalence_detects_corrupted_weight(case9_instance):
    from dualdecomp.verify import check_equivalence

    results = check_equivalence(case9_instance, methods=("dg",), rounds=30,
                                corrupt_weight=(0, 7.5))
    assert not results[0].passed
    assert "first divergence at round" in results[0].detail


def test_hdfg_lockstep_covers_both_phases(toys):
    inst, _ = toys["dcopf2"]
    report = simnet.verify_equivalence(inst, "hdfg", rounds=20)
    assert report.passed


def test_message_log_payload_norms(toys):
    inst, _ = toys["num"]
    net = _net(inst, log_messages=True)
    net.run_round("primal")
    rec = net.message_log[-1]
    assert set(rec) == {"round", "agent", "block", "direction", "payload_norm"}
    assert rec["payload_norm"] >= 0.0
