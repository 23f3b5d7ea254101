import math

import numpy as np
import pytest
import scipy.linalg

from otrobust.controller import (
    GainSchedule,
    LinearModel,
    LqrWeights,
    SynthesisError,
    build_schedule,
    care_residual,
    gs_control,
    interpolate_gain,
    linearize,
    linearize_plant,
    lqr_control,
    lqr_gain,
    solve_care,
    spectral_abscissa,
)
from otrobust.f16 import DEG

# Published gain for this plant and weights, printed there for the opposite
# feedback-sign convention (u = u_trim + K dx); ours is u = u_trim - K dx,
# so the stabilizing gain is the negative of the printed matrix.
K_PUBLISHED = np.array([[7144.9, -400.58, -1355.8, 2002.8],
                        [0.7419, -0.0113, -0.2053, 0.3221]])


def test_linearize_exact_on_linear_map(rng):
    M = rng.standard_normal((4, 4))
    B = rng.standard_normal((4, 2))
    model = linearize(lambda x, u: M @ x + B @ u, np.zeros(4), np.zeros(2))
    assert np.max(np.abs(model.A - M)) <= 1e-8 * max(1.0, np.max(np.abs(M)))
    assert np.max(np.abs(model.B - B)) <= 1e-8 * max(1.0, np.max(np.abs(B)))


def test_linearize_constant_rhs_is_zero():
    model = linearize(lambda x, u: np.array([1.0, -2.0, 3.0, 0.5]),
                      np.zeros(4), np.zeros(2))
    assert np.allclose(model.A, 0.0, atol=1e-9)
    assert np.allclose(model.B, 0.0, atol=1e-9)


def test_open_loop_eigenvalues_stable_at_trim(params, tables, nominal_trim):
    model = linearize_plant(nominal_trim.x_trim, nominal_trim.u_trim, params, tables)
    eigs = np.linalg.eigvals(model.A)
    assert np.all(eigs.real < 0.0)
    # classic short-period / phugoid pair structure
    assert np.sum(np.abs(eigs.imag) > 1e-6) == 4


def test_care_scalar_integrator():
    P = solve_care(np.array([[0.0]]), np.array([[1.0]]),
                   np.array([[1.0]]), np.array([[1.0]]))
    assert P[0, 0] == pytest.approx(1.0, abs=1e-10)


def test_care_scalar_stable():
    # -2P - P^2 + 1 = 0 -> P = sqrt(2) - 1
    P = solve_care(np.array([[-1.0]]), np.array([[1.0]]),
                   np.array([[1.0]]), np.array([[1.0]]))
    assert P[0, 0] == pytest.approx(math.sqrt(2.0) - 1.0, abs=1e-12)


def test_care_zero_q_hurwitz_a():
    A = np.array([[-1.0, 0.3], [0.0, -2.0]])
    B = np.eye(2)
    P = solve_care(A, B, np.zeros((2, 2)), np.eye(2))
    assert np.allclose(P, 0.0, atol=1e-10)


def test_care_matches_scipy_on_random_instances(rng):
    for _ in range(20):
        n = int(rng.integers(2, 6))
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, max(1, n - 1)))
        Qh = rng.standard_normal((n, n))
        Q = Qh @ Qh.T
        R = np.diag(rng.uniform(0.1, 3.0, B.shape[1]))
        P = solve_care(A, B, Q, R)
        P_ref = scipy.linalg.solve_continuous_are(A, B, Q, R)
        assert np.max(np.abs(P - P_ref)) <= 1e-6 * max(1.0, np.max(np.abs(P_ref)))
        assert care_residual(A, B, Q, R, P) < 1e-8 * max(np.linalg.norm(Q, "fro"), 1e-12)


def test_care_rejects_unstabilizable():
    # unreachable unstable mode
    A = np.array([[1.0, 0.0], [0.0, -1.0]])
    B = np.array([[0.0], [1.0]])
    with pytest.raises(SynthesisError):
        solve_care(A, B, np.eye(2), np.eye(1))


def test_lqr_gain_matches_published_values(setup):
    K = setup.K
    ref = -K_PUBLISHED
    assert np.all(np.sign(K) == np.sign(ref))
    assert np.max(np.abs((K - ref) / ref)) < 0.25
    assert spectral_abscissa(setup.model.A - setup.model.B @ K) < 0.0


def test_lqr_control_at_trim(nominal_trim, nominal_gain):
    u = lqr_control(nominal_trim.x_trim, nominal_gain, nominal_trim)
    assert np.allclose(u, nominal_trim.u_trim.as_array(), rtol=0, atol=1e-12)


def test_lqr_control_linearity(nominal_trim, nominal_gain, rng):
    dx = rng.standard_normal(4) * 0.01
    x0 = nominal_trim.x_trim.as_array()
    u1 = lqr_control(x0 + dx, nominal_gain, nominal_trim)
    u2 = lqr_control(x0 + 2 * dx, nominal_gain, nominal_trim)
    u0 = nominal_trim.u_trim.as_array()
    assert np.allclose(u2 - u0, 2 * (u1 - u0), rtol=1e-9)


def test_lqr_control_pitch_offset_thrust_response(nominal_trim, nominal_gain):
    # one degree of pitch error; frozen from K(0,0) ~ -7142.8 lb/rad
    x = nominal_trim.x_trim.as_array() + np.array([1.0 * DEG, 0, 0, 0])
    u = lqr_control(x, nominal_gain, nominal_trim)
    dT = u[0] - nominal_trim.u_trim.T
    assert dT == pytest.approx(-nominal_gain[0, 0] * DEG, rel=1e-9)
    assert dT == pytest.approx(124.66, abs=0.5)


def test_schedule_all_nodes_stable(schedule):
    assert schedule.n_nodes == 100
    assert np.all(schedule.abscissa_closed < 0.0)
    assert np.any(schedule.abscissa_open > 0.0)


def test_schedule_rejects_partial_grid(grid_trims, params, tables):
    with pytest.raises(ValueError):
        build_schedule(grid_trims[:37], params=params, tables=tables)


def test_gs_control_at_reference(schedule, nominal_trim):
    u = gs_control(nominal_trim.x_trim, schedule)
    assert np.allclose(u, nominal_trim.u_trim.as_array(), rtol=0, atol=1e-9)


def test_gain_interpolation_midpoint_mean(schedule):
    i, j = 4, 5
    V_mid = 0.5 * (schedule.V_nodes[i] + schedule.V_nodes[i + 1])
    alpha = schedule.alpha_nodes[j]
    x = np.array([0.0, V_mid, alpha, 0.0])
    K_mid = interpolate_gain(x, schedule)
    expect = 0.5 * (schedule.K[i, j] + schedule.K[i + 1, j])
    assert np.allclose(K_mid, expect, rtol=1e-12)


def test_gain_interpolation_clamps_to_hull(schedule):
    x_lo = np.array([0.0, 50.0, 0.0, 0.0])
    x_edge = np.array([0.0, 100.0, 0.0, 0.0])
    assert np.array_equal(interpolate_gain(x_lo, schedule),
                          interpolate_gain(x_edge, schedule))
    x_hi = np.array([0.0, 400.0, 80.0 * DEG, 0.0])
    x_hi_edge = np.array([0.0, 400.0, 45.0 * DEG, 0.0])
    assert np.array_equal(interpolate_gain(x_hi, schedule),
                          interpolate_gain(x_hi_edge, schedule))


def test_single_node_schedule_degenerates_to_lqr(params, tables, nominal_trim,
                                                 nominal_gain):
    sched = build_schedule([nominal_trim], params=params, tables=tables,
                           reference=nominal_trim)
    x = nominal_trim.x_trim.as_array() + np.array([0.02, -5.0, 0.01, 0.03])
    u_sched = gs_control(x, sched)
    u_lqr = lqr_control(x, sched.K[0, 0], nominal_trim)
    assert np.allclose(u_sched, u_lqr, rtol=0, atol=1e-12)
    assert np.allclose(sched.K[0, 0], nominal_gain, rtol=1e-8)


def test_gs_control_affine_within_cell(schedule, rng):
    # for fixed deviation, the scheduled control is affine in the
    # scheduling coordinates inside one lattice cell
    i, j = 3, 4
    V0, V1 = schedule.V_nodes[i], schedule.V_nodes[i + 1]
    a0, a1 = schedule.alpha_nodes[j], schedule.alpha_nodes[j + 1]

    def K_at(fv, fa):
        x = np.array([0.0, V0 + fv * (V1 - V0), a0 + fa * (a1 - a0), 0.0])
        return interpolate_gain(x, schedule)

    # along V at fixed alpha fraction: midpoint equals the mean of the ends
    k_left, k_mid, k_right = K_at(0.2, 0.3), K_at(0.5, 0.3), K_at(0.8, 0.3)
    assert np.allclose(k_mid, 0.5 * (k_left + k_right), rtol=1e-10)


def test_schedule_serialization_roundtrip(schedule):
    again = GainSchedule.from_dict(schedule.to_dict())
    assert np.allclose(again.K, schedule.K, rtol=1e-15)
    assert np.allclose(again.x_trims, schedule.x_trims, rtol=0, atol=1e-12)
    assert np.allclose(again.x_ref, schedule.x_ref, rtol=0, atol=1e-12)
    x = np.array([0.1, 430.0, 0.2, -0.1])
    assert np.allclose(gs_control(x, again), gs_control(x, schedule), atol=1e-9)


def test_care_residual_invariant_on_f16_nodes(schedule, params, tables,
                                              grid_trims):
    # spot-check a few synthesized nodes against the Riccati residual bound
    weights = LqrWeights()
    for tp in grid_trims[::23]:
        model = linearize_plant(tp.x_trim, tp.u_trim, params, tables)
        P = solve_care(model.A, model.B, weights.Q, weights.R)
        assert care_residual(model.A, model.B, weights.Q, weights.R, P) \
            < 1e-8 * np.linalg.norm(weights.Q, "fro")
