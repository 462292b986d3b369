import numpy as np
import pytest
from scipy import stats

from mtdlab.attacks import (
    BUCKET_LABELS,
    AttackError,
    ac_attack_at,
    attack_strength,
    gen_ac_attack,
    gen_random_attack,
    gen_single_state,
    gen_worst_case,
    linear_detection_rate,
    linear_residuals,
    strength_bucket,
)
from mtdlab.design import max_rank_baseline
from mtdlab.detector import DetectorSpec, detection_prob
from mtdlab.grid import MtdStrategy
from mtdlab.powerflow import (
    MeasurementVector,
    measurement_count,
    measurement_function,
    noise_sigma,
    residual_norm,
    wls_estimate,
)
from mtdlab.subspace import JacobianPair, noncentrality, weakest_point


@pytest.fixture(scope="module")
def pair6(case6, state6):
    return JacobianPair.from_case(case6, max_rank_baseline(case6, seed=0), state6, 0.01)


def test_strength_formula():
    a = np.array([3.0, 4.0])
    assert attack_strength(a, 1.0) == pytest.approx(5 / np.sqrt(2))
    assert attack_strength(a, [1.0, 2.0]) == pytest.approx(5 / np.sqrt(5))


@pytest.mark.parametrize("rho,label", [(4.99, None), (5, "[5,7)"), (7, "[7,10)"), (9.99, "[7,10)"),
                                       (10, "[10,15)"), (24, "[20,25)"), (25, "[25,inf)"),
                                       (1e6, "[25,inf)"), (float("nan"), None)])
def test_buckets(rho, label):
    assert strength_bucket(rho) == label
    assert label is None or label in BUCKET_LABELS


def test_random_attack_scaling_and_support(pair6):
    J = pair6.J_N * 0.01
    n = J.shape[1]
    counts = np.zeros(n)
    rng = np.random.default_rng(0)
    for _ in range(2000):
        scn = gen_random_attack(J, 10.0, 2, rng)
        assert scn.rho == 10.0
        assert attack_strength(scn.a, 0.01) == pytest.approx(10.0)
        np.testing.assert_allclose(scn.a, J @ scn.c, atol=1e-12)
        assert np.count_nonzero(scn.c) == 2
        counts[scn.c != 0] += 1
    # every state equally likely to be attacked
    assert stats.chisquare(counts).pvalue > 1e-3
    with pytest.raises(AttackError):
        gen_random_attack(J, 10.0, n + 1)


def test_single_state(pair6):
    J = pair6.J_N * 0.01
    scn = gen_single_state(J, 2, 7.0, 0.01, target_bus=3)
    assert np.flatnonzero(scn.c).tolist() == [2]
    assert scn.target_bus == 3 and scn.bucket == "[7,10)"
    cos = scn.a @ J[:, 2] / (np.linalg.norm(scn.a) * np.linalg.norm(J[:, 2]))
    assert cos == pytest.approx(1.0)
    with pytest.raises(AttackError):
        gen_single_state(np.zeros((4, 2)), 0, 5.0)


def test_worst_case_is_weakest(pair6):
    rep = weakest_point(pair6)
    assert rep.k == 0
    rho = 10.0
    scn = gen_worst_case(rep, pair6, rho, 0.01)
    a_N = scn.normalized(0.01)
    lam = noncentrality(pair6, a_N)
    assert lam == pytest.approx((rho**2 * pair6.m) * np.sin(rep.theta_weak) ** 2, rel=1e-8)
    # a_N lies in Col(J_N)
    np.testing.assert_allclose(pair6.J_N @ scn.c, a_N, atol=1e-8)
    rng = np.random.default_rng(1)
    C = rng.standard_normal((pair6.n, 5000))
    A = pair6.J_N @ C
    A *= rho * np.sqrt(pair6.m) / np.linalg.norm(A, axis=0)
    assert lam <= noncentrality(pair6, A).min() + 1e-9


def test_linear_simulation_matches_theory(pair6):
    det = DetectorSpec.build(0.05, pair6.m - pair6.n)
    rep = weakest_point(pair6)
    scn = gen_worst_case(rep, pair6, 10.0, 0.01)
    a_N = scn.normalized(0.01)
    rate = linear_detection_rate(pair6, a_N, det, 20000, 3)
    assert rate == pytest.approx(detection_prob(noncentrality(pair6, a_N), det), abs=0.01)
    clean = linear_residuals(pair6, np.zeros(pair6.m), 20000, 4)
    assert stats.kstest(clean, stats.chi2(pair6.m - pair6.n).cdf).pvalue > 1e-3


def test_ac_attack_is_stealthy_without_mtd(case6, state6):
    """Without a perturbation the AC attack passes the detector like clean data."""
    rng = np.random.default_rng(7)
    sig = noise_sigma(case6, 0.01)
    h0 = measurement_function(state6, case6)
    dof = measurement_count(case6) - 2 * case6.n_state
    res = []
    for _ in range(300):
        scn = gen_ac_attack(case6, state6, rng)
        assert scn.rho >= 5 and scn.bucket is not None
        assert scn.c[case6.ref_bus] == 0
        z = MeasurementVector(h0 + scn.a + sig * rng.standard_normal(len(sig)), sig)
        res.append(residual_norm(z, wls_estimate(z, case6), case6))
    assert stats.kstest(res, stats.chi2(dof).cdf).pvalue > 1e-3


def test_ac_attack_strength_spread(case14, state14):
    rng = np.random.default_rng(2)
    labels = {gen_ac_attack(case14, state14, rng).bucket for _ in range(300)}
    assert labels == set(BUCKET_LABELS)
    with pytest.raises(AttackError):
        gen_ac_attack(case14, state14, 0, box=1e-9, max_draws=5)


def test_ac_attack_reevaluation(case6, state6):
    scn = gen_ac_attack(case6, state6, 3)
    again = ac_attack_at(case6, scn.c, state6)
    np.testing.assert_allclose(again.a, scn.a)
    assert again.rho == pytest.approx(scn.rho)
    zero = ac_attack_at(case6, np.zeros(case6.n_bus), state6)
    assert zero.rho == 0 and zero.bucket is None
