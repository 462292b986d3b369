import numpy as np
import pytest
from scipy import stats

from mtdlab.grid import MtdStrategy, load_case
from mtdlab.powerflow import (
    EstimationError,
    MeasurementVector,
    PowerFlowError,
    StateVector,
    measurement_count,
    measurement_function,
    measurement_jacobian,
    noise_sigma,
    residual_norm,
    simulate_measurements,
    solve_powerflow,
    wls_estimate,
)

from conftest import MESH, toy_case


def _random_state(case, rng, spread=0.2):
    v = 1 + 0.05 * rng.standard_normal(case.n_bus)
    th = spread * rng.standard_normal(case.n_bus)
    th[case.ref_bus] = 0.0
    return StateVector(v, th)


def _loop_flows(case, state, strategy=None):
    """From-side complex flows evaluated branch by branch."""
    x = case.x if strategy is None else strategy.x_post(case)
    V = state.complex
    out = []
    for k, br in enumerate(case.branches):
        y = 1.0 / complex(br.r, x[k])
        out.append(V[br.from_bus] * np.conj(y * (V[br.from_bus] - V[br.to_bus])))
    return np.array(out)


def test_two_bus_flow():
    c = toy_case([(1, 2)], r=0.0, x=0.1)
    h = measurement_function(StateVector([1.0, 1.0], [0.0, -0.1]), c)
    p_flow = h[2 * c.n_bus]
    assert p_flow == pytest.approx(10 * np.sin(0.1), rel=1e-12)


def test_flat_state_lossless_flows_vanish():
    c = toy_case(MESH, r=0.0)
    h = measurement_function(StateVector.flat(c), c)
    np.testing.assert_allclose(h, 0.0, atol=1e-12)


def test_flows_match_branchwise_formula(case14, rng):
    s = MtdStrategy.from_ratio(case14, rng.uniform(-0.2, 0.2, case14.n_branch))
    state = _random_state(case14, rng)
    h = measurement_function(state, case14, s)
    S = _loop_flows(case14, state, s)
    nb, m = case14.n_bus, case14.n_branch
    np.testing.assert_allclose(h[2 * nb:2 * nb + m], S.real, atol=1e-12)
    np.testing.assert_allclose(h[2 * nb + m:], S.imag, atol=1e-12)


def test_injections_sum_to_losses(case14, rng):
    state = _random_state(case14, rng)
    h = measurement_function(state, case14)
    V = state.complex
    losses = sum(br.r / (br.r**2 + br.x**2) * abs(V[br.from_bus] - V[br.to_bus]) ** 2
                 for br in case14.branches)
    assert h[:case14.n_bus].sum() == pytest.approx(losses, rel=1e-10)


@pytest.mark.parametrize("name", ["case6ww", "case14"])
def test_jacobian_matches_finite_differences(name, rng):
    case = load_case(name)
    s = MtdStrategy.from_ratio(case, rng.uniform(-0.2, 0.2, case.n_branch))
    for _ in range(5):
        state = _random_state(case, rng)
        H = measurement_jacobian(state, case, s)
        nr, eps = case.non_ref, 1e-6
        fd = np.zeros_like(H)
        for j, bus in enumerate(nr):
            for block, attr in ((0, "theta"), (1, "v")):
                up = {"v": state.v.copy(), "theta": state.theta.copy()}
                dn = {"v": state.v.copy(), "theta": state.theta.copy()}
                up[attr][bus] += eps
                dn[attr][bus] -= eps
                col = block * len(nr) + j
                fd[:, col] = (measurement_function(StateVector(**up), case, s)
                              - measurement_function(StateVector(**dn), case, s)) / (2 * eps)
        assert np.linalg.norm(H - fd) / np.linalg.norm(fd) < 1e-6


def test_powerflow_converges(case14, case57):
    for case in (case14, case57):
        state = solve_powerflow(case)
        nb = case.n_bus
        h = measurement_function(state, case)
        p, q = h[:nb], h[nb:2 * nb]
        # PQ buses hold their loads, PV buses their voltage set point
        pv = {g.bus for g in case.generators}
        for i in range(nb):
            if i == case.ref_bus:
                continue
            if i not in pv:
                assert p[i] == pytest.approx(-case.pd[i], abs=1e-8)
                assert q[i] == pytest.approx(-case.qd[i], abs=1e-8)
        for g in case.generators:
            assert state.v[g.bus] == pytest.approx(g.vg)
        assert state.theta[case.ref_bus] == 0.0


def test_zero_load_gives_zero_flows():
    c = toy_case(MESH)
    state = solve_powerflow(c)
    np.testing.assert_allclose(measurement_function(state, c), 0.0, atol=1e-9)


def test_infeasible_loads_raise(case14):
    with pytest.raises(PowerFlowError):
        solve_powerflow(case14, loads=(case14.pd * 100, case14.qd * 100))


def test_simulate_measurements(case6, state6):
    z = simulate_measurements(state6, case6, None, 0.0, 1)
    np.testing.assert_array_equal(z.z, measurement_function(state6, case6))
    a = simulate_measurements(state6, case6, None, 0.01, 7)
    b = simulate_measurements(state6, case6, None, 0.01, 7)
    np.testing.assert_array_equal(a.z, b.z)
    rng = np.random.default_rng(3)
    h = measurement_function(state6, case6)
    draws = np.array([simulate_measurements(state6, case6, None, 0.01, rng).z - h
                      for _ in range(20000)])
    np.testing.assert_allclose(draws.var(axis=0), 1e-4, rtol=0.05)


def test_wls_recovers_noiseless_state(case14, rng):
    s = MtdStrategy.from_ratio(case14, 0.1)
    truth = solve_powerflow(case14, s)
    z = MeasurementVector(measurement_function(truth, case14, s), noise_sigma(case14))
    est = wls_estimate(z, case14, s)
    np.testing.assert_allclose(est.v, truth.v, atol=1e-6)
    np.testing.assert_allclose(est.theta, truth.theta, atol=1e-6)
    assert residual_norm(z, est, case14, s) < 1e-12


def test_wls_rejects_bad_inputs(case6):
    z = MeasurementVector(np.zeros(measurement_count(case6)), np.zeros(measurement_count(case6)))
    with pytest.raises(EstimationError):
        wls_estimate(z, case6)
    z = MeasurementVector(np.zeros(3), np.ones(3))
    with pytest.raises(EstimationError):
        wls_estimate(z, case6)


def test_residual_norm_three_sigma(case6, state6):
    h = measurement_function(state6, case6)
    z = h.copy()
    z[4] += 0.03
    assert residual_norm(MeasurementVector(z, noise_sigma(case6)), state6, case6) == pytest.approx(9.0)


def test_residual_is_chi_square(case6, state6):
    rng = np.random.default_rng(11)
    dof = measurement_count(case6) - 2 * case6.n_state
    g = []
    for _ in range(2000):
        z = simulate_measurements(state6, case6, None, 0.01, rng)
        g.append(residual_norm(z, wls_estimate(z, case6), case6))
    g = np.array(g)
    assert abs(g.mean() / dof - 1) < 0.03
    assert stats.kstest(g, stats.chi2(dof).cdf).pvalue > 0.01
