import math

import numpy as np
import pytest

from hybridcover.config import SimConfig
from hybridcover.errors import SingularEventError
from hybridcover.ipa import (GradientAccumulator, IpaDerivatives, accumulate_gradient,
                             chained_speed_prime, charging_finish_prime, en_route_finish_prime,
                             frozen_heading_prime, jump_guard12, jump_guard23, jump_guard31,
                             jump_speed_change, propagate_mode1, propagate_mode2_mode3, unit)
from hybridcover.simulation import Simulation, run_simulation

V, ALPHA, BETA = 5.0, 1e-4, 0.01


def random_derivs(n, seed=0):
    rng = np.random.default_rng(seed)
    return IpaDerivatives(rng.normal(size=(n, n)), rng.normal(size=(n, n)),
                          rng.normal(size=(n, n)) * 0.01)


# -- propagation ---------------------------------------------------------------

def test_zero_derivatives_stay_zero():
    d = IpaDerivatives.zeros(3)
    jac = np.random.default_rng(1).normal(size=(2, 3, 2))
    out = propagate_mode1(d, [0], [jac], V, 0.05)
    assert out.max_abs() == 0.0


def test_zero_jacobian_keeps_derivatives_constant():
    d = random_derivs(2)
    out = propagate_mode1(d, [0, 1], [np.zeros((2, 2, 2))] * 2, V, 0.05)
    np.testing.assert_array_equal(out.x_prime, d.x_prime)
    np.testing.assert_array_equal(out.y_prime, d.y_prime)


def test_propagate_mode1_solves_linear_ode():
    # one agent, Jacobian J: d/dt [x', y'] = v J [x', y'] -> matrix exponential
    jac = np.array([[[-0.3, 0.1]], [[0.2, -0.4]]])  # (2, 1, 2)
    d = IpaDerivatives(np.array([[1.0]]), np.array([[0.5]]), np.array([[0.0]]))
    dt, steps = 0.05, 40
    for _ in range(steps):
        d = propagate_mode1(d, [0], [jac], V, dt)
    a = V * jac[:, 0, :]
    w, vecs = np.linalg.eig(a)
    exact = (vecs @ np.diag(np.exp(w * dt * steps)) @ np.linalg.inv(vecs) @ [1.0, 0.5]).real
    np.testing.assert_allclose([d.x_prime[0, 0], d.y_prime[0, 0]], exact, rtol=1e-6)


def test_modes_2_3_leave_derivatives_unchanged():
    d = random_derivs(3)
    assert propagate_mode2_mode3(d) is d


# -- Guard12 -------------------------------------------------------------------

def test_guard12_first_in_queue_keeps_q_prime():
    d = random_derivs(2, seed=3)
    q_before = d.q_prime.copy()
    jump_guard12(0, (20.0, 15.0), 0.0125, (0.6, 0.8), V, V, ALPHA, d)
    np.testing.assert_array_equal(d.q_prime, q_before)


def test_guard12_homogeneous_case():
    d = IpaDerivatives.zeros(2)
    tau = jump_guard12(1, (20.0, 15.0), 0.0125, (0.6, 0.8), V, 2.0, ALPHA, d)
    assert np.all(tau == 0)
    assert d.max_abs() == 0.0


def test_guard12_formula_by_hand():
    d = random_derivs(2, seed=5)
    before = d.copy()
    x, y, q = 20.0, 15.0, V * ALPHA * 25.0
    c, s = 0.6, 0.8
    v_after = 3.0
    tau = jump_guard12(0, (x, y), q, (c, s), V, v_after, ALPHA, d)
    num = q * before.q_prime[0] - V ** 2 * ALPHA ** 2 * (x * before.x_prime[0] + y * before.y_prime[0])
    den = ALPHA * V ** 2 * q + V ** 3 * ALPHA ** 2 * (x * c + y * s)
    np.testing.assert_allclose(tau, num / den)
    # post-event heading points home: cos w(τ₂⁺) = -x/‖s‖
    np.testing.assert_allclose(d.x_prime[0], before.x_prime[0] + (V * c + v_after * x / 25.0) * tau)
    np.testing.assert_allclose(d.y_prime[0], before.y_prime[0] + (V * s + v_after * y / 25.0) * tau)
    np.testing.assert_allclose(d.q_prime[0], before.q_prime[0] + ALPHA * (v_after ** 2 - V ** 2) * tau)
    np.testing.assert_array_equal(d.x_prime[1], before.x_prime[1])


def test_guard12_singular_denominator():
    d = random_derivs(1)
    with pytest.raises(SingularEventError):
        jump_guard12(0, (0.0, 0.0), 0.0, (1.0, 0.0), V, V, ALPHA, d)


# -- Guard23 -------------------------------------------------------------------

def test_guard23_homogeneous_case():
    d = IpaDerivatives.zeros(2)
    tau = jump_guard23(0, (0.6, 0.8), V, ALPHA, BETA, d)
    assert np.all(tau == 0) and d.max_abs() == 0


def test_guard23_pure_x_approach():
    d = IpaDerivatives.zeros(3)
    d.x_prime[0] = [1.0, 0.0, 0.0]
    # agent came from the +x side: frozen heading (1, 0), travel direction w = π
    tau = jump_guard23(0, (1.0, 0.0), V, ALPHA, BETA, d)
    np.testing.assert_allclose(tau, [0.2, 0.0, 0.0])
    # position derivative is absorbed: the agent sits exactly at the origin
    np.testing.assert_allclose(d.x_prime[0], 0.0, atol=1e-15)
    np.testing.assert_allclose(d.q_prime[0], -(ALPHA * V ** 2 + BETA) * tau)


def test_guard23_direction_of_travel_convention():
    # with cos w = 1 (moving in +x) and x' = e_0 the limit formula gives -0.2
    d = IpaDerivatives.zeros(2)
    d.x_prime[0] = [1.0, 0.0]
    tau = jump_guard23(0, (-1.0, 0.0), V, ALPHA, BETA, d)
    np.testing.assert_allclose(tau, [-0.2, 0.0])


def test_guard23_rejects_nonpositive_speed():
    with pytest.raises(ValueError):
        jump_guard23(0, (1.0, 0.0), 0.0, ALPHA, BETA, IpaDerivatives.zeros(1))


# -- Guard31 -------------------------------------------------------------------

def test_guard31_from_zero_derivatives():
    d = IpaDerivatives.zeros(4)
    tau = jump_guard31(2, (0.6, 0.8), V, ALPHA, BETA, d)
    np.testing.assert_allclose(tau, 100.0 * unit(2, 4))
    np.testing.assert_allclose(d.q_prime[2], unit(2, 4) * (1 + ALPHA * V ** 2 / BETA))
    np.testing.assert_allclose(d.x_prime[2], -V * 0.6 * tau)
    np.testing.assert_allclose(d.y_prime[2], -V * 0.8 * tau)


def test_guard31_zero_dwell_uses_arrival_derivative():
    d = IpaDerivatives.zeros(2)
    tau3 = np.array([0.3, -0.1])
    tau = jump_guard31(0, (1.0, 0.0), V, ALPHA, BETA, d, tau3_prime=tau3, zero_dwell=True)
    np.testing.assert_array_equal(tau, tau3)


def test_exogenous_speed_change_leaves_derivatives():
    d = random_derivs(3)
    before = d.copy()
    jump_speed_change(1, (0.6, 0.8), V, 2.0, ALPHA, np.zeros(3), d)
    for a, b in [(d.x_prime, before.x_prime), (d.y_prime, before.y_prime),
                 (d.q_prime, before.q_prime)]:
        np.testing.assert_array_equal(a, b)


# -- helpers of the exact treatment ---------------------------------------------

def test_frozen_heading_prime_matches_differences():
    rng = np.random.default_rng(2)
    p = np.array([12.0, 7.0])
    pp = rng.normal(size=(2, 3))
    h = 1e-6
    for k in range(3):
        u1 = (p + h * pp[:, k]) / np.linalg.norm(p + h * pp[:, k])
        u2 = (p - h * pp[:, k]) / np.linalg.norm(p - h * pp[:, k])
        np.testing.assert_allclose(frozen_heading_prime(p, pp)[:, k], (u1 - u2) / (2 * h),
                                   rtol=1e-6, atol=1e-12)


def test_chained_speed_prime_matches_differences():
    r, F, t = 30.0, 50.0, 20.0
    rp, Fp, tp = np.array([1.0, 0.0]), np.array([0.0, 2.0]), np.array([0.5, 0.5])
    h = 1e-6
    speed = lambda e: (r + e * rp) / ((F + e * Fp) - (t + e * tp))  # noqa: E731
    np.testing.assert_allclose(chained_speed_prime(r, rp, F, Fp, t, tp),
                               (speed(h) - speed(-h)) / (2 * h), rtol=1e-6)


def test_en_route_finish_prime_matches_differences():
    d = random_derivs(2, seed=9)
    u = np.array([0.6, 0.8])
    r, v, q, theta = 25.0, 3.0, 0.3, 1.0
    vp = np.array([0.2, -0.1])
    got = en_route_finish_prime(0, r, u, v, vp, q, theta, ALPHA, BETA, d)
    h = 1e-6
    for k in range(2):
        def finish(e):
            rr = r + e * (u[0] * d.x_prime[0, k] + u[1] * d.y_prime[0, k])
            vv = v + e * vp[k]
            qq = q + e * d.q_prime[0, k]
            th = theta + e * (k == 0)
            arrival = rr / vv
            return arrival + max(0.0, th - (qq - ALPHA * vv * rr)) / BETA
        assert got[k] == pytest.approx((finish(h) - finish(-h)) / (2 * h), rel=1e-6)


def test_charging_finish_prime():
    d = IpaDerivatives.zeros(2)
    d.q_prime[1] = [0.1, 0.2]
    np.testing.assert_allclose(charging_finish_prime(1, d, BETA), [-10.0, 80.0])


def test_accumulate_gradient_zero_and_linear():
    acc = GradientAccumulator.zeros(2)
    accumulate_gradient(acc, np.ones((2, 2)), IpaDerivatives.zeros(2), 0.05)
    assert np.all(acc.dJ_dtheta == 0)
    d = IpaDerivatives(np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)))
    accumulate_gradient(acc, np.array([[2.0, 0.0], [3.0, 1.0]]), d, 0.5)
    np.testing.assert_allclose(acc.dJ_dtheta, [1.0, 1.5])
    assert acc.interval == pytest.approx(0.55)


# -- trajectory finite-difference oracles ---------------------------------------

TWO = dict(initial_positions=((10, 10), (30, 20)), initial_soc=(0.2, 0.25), delta=(22, 22),
           v_max=5, alpha=1e-4, beta=0.01, dt=0.05)


@pytest.mark.parametrize("horizon", [100.0, 250.0])
def test_state_sensitivities_match_trajectory_differences(horizon):
    cfg = SimConfig(theta=(0.6, 0.5), horizon=horizon, **TWO)
    sim = Simulation(cfg)
    rec = sim.run()
    d = sim.derivs
    h = 1e-4
    for k in range(2):
        tp = np.array(cfg.theta)
        tm = tp.copy()
        tp[k] += h
        tm[k] -= h
        rp = run_simulation(cfg, theta=tp)
        rm = run_simulation(cfg, theta=tm)
        assert rp.event_signature == rm.event_signature == rec.event_signature
        fd = (rp.states[-1] - rm.states[-1]) / (2 * h)
        for col, mat in [(0, d.x_prime), (1, d.y_prime), (2, d.q_prime)]:
            np.testing.assert_allclose(mat[:, k], fd[:, col], rtol=1e-2,
                                       atol=1e-2 * max(1.0, np.abs(fd[:, col]).max()))


def test_single_agent_gradient_sign():
    cfg = SimConfig(initial_positions=((10, 10),), initial_soc=(0.2,), delta=(22,),
                    theta=(0.9,), horizon=200.0, dt=0.05)
    rec = run_simulation(cfg)
    kinds = [e.kind.value for e in rec.events]
    assert kinds[:3] == ["Guard12", "Guard23", "Guard31"]
    h = 1e-3
    fd = (run_simulation(cfg, theta=[0.9 + h]).J_mean
          - run_simulation(cfg, theta=[0.9 - h]).J_mean) / (2 * h)
    assert np.sign(rec.dJ_dtheta[0]) == np.sign(fd) != 0
    # charged so long the agent is still at the station at T
    stuck = run_simulation(cfg.replace(horizon=150.0), theta=[1.0])
    assert stuck.events[-2].kind.value == "Guard23"
    assert stuck.dJ_dtheta[0] == 0.0


@pytest.mark.parametrize("policy", ["frfs", "sdf"])
def test_three_agent_gradient_matches_differences(policy):
    cfg = SimConfig(initial_positions=((10, 10), (30, 20), (50, 40)),
                    initial_soc=(0.2, 0.25, 0.22), delta=(22, 18, 15), theta=(0.6, 0.5, 0.4),
                    horizon=300.0, dt=0.05, policy=policy)
    rec = run_simulation(cfg)
    h = 1e-3
    checked = 0
    for k in range(3):
        tp = np.array(cfg.theta)
        tm = tp.copy()
        tp[k] += h
        tm[k] -= h
        rp, rm = run_simulation(cfg, theta=tp), run_simulation(cfg, theta=tm)
        if not rp.event_signature == rm.event_signature == rec.event_signature:
            continue  # event order changed: finite differences do not apply
        fd = (rp.J_mean - rm.J_mean) / (2 * h)
        assert abs(rec.dJ_dtheta[k] - fd) <= max(0.05 * abs(fd), 1e-5)
        checked += 1
    assert checked >= 2


def test_exogenous_treatment_runs_and_matches_plain_simulation():
    cfg = SimConfig(theta=(0.6, 0.5), horizon=150.0, ipa="exogenous", **TWO)
    rec = run_simulation(cfg)
    assert math.isfinite(rec.J_total)
    assert np.all(np.isfinite(rec.dJ_dtheta))
    off = run_simulation(cfg.replace(ipa="off"))
    assert off.J_total == rec.J_total
    assert np.all(off.dJ_dtheta == 0)
