import math

import numpy as np
import pytest

from dualdecomp import certificates, model
from dualdecomp._backend import PythonOracle
from dualdecomp.algorithms import dg_step, init_dg
from dualdecomp.errors import (
    DegenerateDenominator,
    InsufficientData,
    MissingReference,
)
from dualdecomp.oracle import DualPoint, WeightMatrix, lipschitz_profile, weight_matrix


def _W(inst):
    return weight_matrix(inst, lipschitz_profile(inst))


# -- feasibility norm ---------------------------------------------------------


def test_feasibility_violation_feasible_point(toys):
    inst, info = toys["eq"]
    W = _W(inst)
    assert certificates.feasibility_violation(inst, W, info["zstar"]) == pytest.approx(0.0)


def test_feasibility_violation_scaling():
    # Scalar equality residual 3 under weight 9 contributes 3/sqrt(9) = 1.
    structure = model.BipartiteStructure(1, 1, [[True]])
    coupling = model.BlockCoupling([1], [1], [0],
                                   {(0, 0): (np.array([[1.0]]), None)}, [0.0], [])
    inst = model.build_problem(structure, coupling, [model.Quadratic([1.0], [0.0])])
    W = WeightMatrix.uniform(inst, 9.0)
    assert certificates.feasibility_violation(inst, W, np.array([3.0])) == pytest.approx(1.0)


def test_feasibility_violation_clips_satisfied_inequalities(toys):
    inst, _ = toys["ineq"]
    W = _W(inst)
    # z = -4 gives inequality residual -5: satisfied, contributes nothing.
    assert certificates.feasibility_violation(inst, W, np.array([-4.0])) == pytest.approx(0.0)


# -- R ------------------------------------------------------------------------


def test_estimate_R_hand_values(toys):
    inst, info = toys["eq"]
    assert certificates.estimate_R(inst, _W(inst), info["lamstar"]) == pytest.approx(1.0)
    inst, info = toys["ineq"]
    assert certificates.estimate_R(inst, _W(inst), info["lamstar"]) == pytest.approx(1.0)
    with pytest.raises(MissingReference):
        certificates.estimate_R(inst, _W(inst), None)


def test_estimate_R_zero_collapses_bounds(toys):
    inst, _ = toys["eq"]
    R = certificates.estimate_R(inst, _W(inst), DualPoint(np.zeros(1), np.zeros(0)))
    assert R == 0.0
    bounds = certificates.theoretical_bounds(5, R, sigma_f=1.0)
    for key in ("avg_dual_gap", "avg_feasibility", "avg_distance", "last_feasibility"):
        assert bounds[key] == 0.0


# -- theorem bounds -----------------------------------------------------------


def test_theoretical_bounds_formulas():
    b0 = certificates.theoretical_bounds(0, R=1.0, sigma_f=1.0)
    assert b0["avg_dual_gap"] == pytest.approx(2.0)
    b1 = certificates.theoretical_bounds(1, R=1.0, sigma_f=1.0)
    assert b1["avg_feasibility"] == pytest.approx(2.0)  # 8/(k+1)^2 at k = 1
    assert b1["avg_primal_low"] == pytest.approx(-2.0)
    assert b1["last_feasibility"] == pytest.approx(2.0 / 2 ** 1.5)
    bl = certificates.theoretical_bounds(3, R=2.0, sigma_f=4.0, L_f=5.0)
    assert bl["last_primal_up"] == pytest.approx(2 * 5 * 2 / (2.0 * 4))
    # kappa = 0 gives ratio 4/5; the geometric gap bound at k = 1 is 0.8 gap0.
    bg = certificates.theoretical_bounds(1, R=1.0, sigma_f=1.0, kappa=0.0,
                                         d0=0.0, fstar=1.0)
    assert bg["geo_ratio"] == pytest.approx(0.8)
    assert bg["geo_dual_gap"] == pytest.approx(0.8)


def test_theoretical_bounds_monotone_in_k():
    prev = None
    for k in range(0, 40):
        b = certificates.theoretical_bounds(k, R=3.0, sigma_f=2.0)
        if prev is not None:
            for key in ("avg_dual_gap", "avg_feasibility", "avg_distance",
                        "last_dual_gap", "last_feasibility", "last_distance"):
                assert b[key] <= prev[key] + 1e-15
        prev = b


# -- gradient map -------------------------------------------------------------


def test_gradient_map_zero_at_optimum(toys):
    for name in ("eq", "ineq", "num"):
        inst, info = toys[name]
        W = _W(inst)
        gm = certificates.gradient_map(inst, W, info["lamstar"])
        assert W.norm(gm.packed()) <= 1e-8


def test_gradient_map_unconstrained_is_scaled_gradient(toys):
    inst, _ = toys["eq"]  # equality-only: the projection is the identity
    W = _W(inst)
    lam = DualPoint(np.array([0.3]), np.zeros(0))
    gm = certificates.gradient_map(inst, W, lam)
    from dualdecomp.oracle import dual_value_grad

    _, g, _ = dual_value_grad(inst, lam)
    np.testing.assert_allclose(gm.nu, W.scale_inv(np.concatenate([g.nu, g.mu])),
                               atol=1e-14)


def test_gradient_map_is_3_lipschitz(case9_instance):
    inst = case9_instance
    W = _W(inst)
    rng = np.random.default_rng(17)
    for _ in range(40):
        a = certificates.random_dual_point(inst, rng, 2.0)
        b = certificates.random_dual_point(inst, rng, 2.0)
        ga = certificates.gradient_map(inst, W, a)
        gb = certificates.gradient_map(inst, W, b)
        lhs = W.norm(ga.packed() - gb.packed())
        rhs = 3.0 * W.norm(a.packed() - b.packed())
        assert lhs <= rhs * (1 + 1e-9)


def test_gradient_map_matches_dg_step(toys, case9_instance):
    # ||gradient map at lambda^k||_W equals the W-norm of the ascent step.
    for inst in (toys["dcopf2"][0], case9_instance):
        W = _W(inst)
        backend = PythonOracle(inst)
        state = init_dg(backend, W)
        for _ in range(20):
            lam_before = state.lam.copy()
            dg_step(state)
            gm = certificates.gradient_map(
                inst, W, DualPoint.from_packed(inst, lam_before))
            assert abs(W.norm(gm.packed()) - state.step_w) <= 1e-12 * (1 + state.step_w)


# -- error-bound ratio ---------------------------------------------------------


def test_error_bound_ratio_hand_value(toys):
    # At lambda = 0 on the equality toy: ||0 - (-1)||_W / ||grad map||_W = 1.
    inst, info = toys["eq"]
    W = _W(inst)
    lam = DualPoint(np.zeros(1), np.zeros(0))
    assert certificates.error_bound_ratio(inst, W, lam, info["lamstar"]) == pytest.approx(1.0)
    with pytest.raises(DegenerateDenominator):
        certificates.error_bound_ratio(inst, W, info["lamstar"], info["lamstar"])


def test_error_bound_ratio_norm_homogeneity(toys):
    # With the gradient map held fixed, scaling the measuring norm by t
    # scales both the distance and the map norm by sqrt(t): the ratio is
    # invariant.  (Scaling the map's own step metric as well changes the map
    # and does not preserve the ratio.)
    inst, info = toys["ineq"]
    W1 = _W(inst)
    W2 = WeightMatrix(inst, W1.w * 7.3)
    lam = DualPoint(np.zeros(0), np.array([0.25]))
    gm = certificates.gradient_map(inst, W1, lam).packed()
    diff = lam.packed() - info["lamstar"].packed()
    r1 = W1.norm(diff) / W1.norm(gm)
    r2 = W2.norm(diff) / W2.norm(gm)
    assert W2.norm(diff) == pytest.approx(math.sqrt(7.3) * W1.norm(diff), rel=1e-12)
    assert r1 == pytest.approx(r2, rel=1e-9)


def test_error_bound_ratio_bounded_near_optimum(case9_instance, case9_reference):
    inst, ref = case9_instance, case9_reference
    W = _W(inst)
    backend = PythonOracle(inst)
    state = init_dg(backend, W)
    ratios = []
    for _ in range(300):
        lam_before = state.lam.copy()
        dg_step(state)
        if state.step_w > 1e-12:
            ratios.append(certificates.error_bound_ratio(
                inst, W, DualPoint.from_packed(inst, lam_before), ref.lamstar))
    assert np.isfinite(ratios).all()
    assert max(ratios) < 1e7


# -- rate fitting --------------------------------------------------------------


def test_fit_linear_rate_geometric():
    rho = 0.93
    pts = [(k, rho ** k) for k in range(40)]
    slope, intercept, corr = certificates.fit_linear_rate(pts)
    assert slope == pytest.approx(math.log(rho), rel=1e-9)
    assert corr == pytest.approx(1.0, abs=1e-12)


def test_fit_linear_rate_constant_gap():
    pts = [(k, 0.5) for k in range(40)]
    slope, intercept, corr = certificates.fit_linear_rate(pts)
    assert slope == pytest.approx(0.0, abs=1e-12)
    assert corr == 0.0


def test_fit_linear_rate_insufficient_data():
    with pytest.raises(InsufficientData):
        certificates.fit_linear_rate([(k, 1e-20) for k in range(50)])
    with pytest.raises(InsufficientData):
        certificates.fit_linear_rate([(0, 1.0)])
