import math

import mpmath
import numpy as np
import pytest
from scipy import integrate, stats

from mtdlab.detector import (
    DetectorSpec,
    chi2_threshold,
    critical_lambda,
    detection_prob,
    min_attack_strength,
)


def _tail_by_quadrature(x, dof):
    k = dof / 2
    pdf = lambda u: math.exp((k - 1) * math.log(u) - u / 2 - k * math.log(2) - math.lgamma(k))
    return integrate.quad(pdf, x, np.inf)[0]


def test_threshold_reference_value():
    assert chi2_threshold(0.05, 1) == pytest.approx(3.8415, abs=1e-3)
    t = chi2_threshold(0.05, 7)
    assert abs(_tail_by_quadrature(t, 7) - 0.05) < 1e-10


@pytest.mark.parametrize("dof", [1, 5, 7, 24, 42, 162])
@pytest.mark.parametrize("alpha", [0.01, 0.05, 0.2])
def test_threshold_tail_mass(alpha, dof):
    t = chi2_threshold(alpha, dof)
    assert abs(stats.chi2.sf(t, dof) - alpha) < 1e-10


def test_threshold_limits_and_order():
    assert chi2_threshold(1 - 1e-12, 3) < 1e-6
    assert chi2_threshold(0.05, 10) > chi2_threshold(0.05, 5)
    with pytest.raises(ValueError):
        chi2_threshold(0.0, 3)
    with pytest.raises(ValueError):
        chi2_threshold(0.05, 0)


def test_detection_prob_basic():
    det = DetectorSpec.build(0.05, 7)
    assert detection_prob(0.0, det) == pytest.approx(0.05, abs=1e-12)
    grid = detection_prob(np.arange(101.0), det)
    assert np.all(np.diff(grid) > 0)
    assert detection_prob(400.0, det) > 1 - 1e-12
    with pytest.raises(ValueError):
        detection_prob(-1.0, det)


@pytest.mark.parametrize("dof", [7, 42, 162])
@pytest.mark.parametrize("lam", [0.3, 1.0, 5.0, 25.0, 120.0])
def test_detection_prob_vs_references(dof, lam):
    det = DetectorSpec.build(0.05, dof)
    ours = detection_prob(lam, det)
    assert ours == pytest.approx(stats.ncx2.sf(det.threshold, dof, lam), rel=1e-8)
    mpmath.mp.dps = 30
    # Poisson mixture evaluated in extended precision
    mu = mpmath.mpf(lam) / 2
    ref = mpmath.nsum(lambda j: mpmath.exp(-mu) * mu**j / mpmath.factorial(j)
                      * mpmath.gammainc(dof / 2 + j, det.threshold / 2, mpmath.inf, regularized=True),
                      [0, mpmath.inf])
    assert abs(ours - float(ref)) < 1e-10


def test_detection_prob_monte_carlo():
    det = DetectorSpec.build(0.05, 7)
    rng = np.random.default_rng(5)
    shift = np.zeros(7)
    shift[0] = math.sqrt(10.0)
    g = np.sum((rng.standard_normal((100000, 7)) + shift) ** 2, axis=1)
    assert abs(np.mean(g > det.threshold) - detection_prob(10.0, det)) < 0.01


def test_critical_lambda():
    det = DetectorSpec.build(0.05, 7)
    assert critical_lambda(0.05, det) == 0.0
    lam = critical_lambda(0.95, det)
    assert 0.95 <= detection_prob(lam, det) <= 0.95 + 1e-4
    assert detection_prob(lam - 1e-3, det) < 0.95


def test_min_attack_strength():
    det = DetectorSpec.build(0.05, 7)
    rho = min_attack_strength(0.9, det, 20)
    assert rho == pytest.approx(math.sqrt(critical_lambda(0.9, det) / 20))
    # an attack of that strength fully outside the subspace just reaches beta
    assert detection_prob(rho**2 * 20, det) >= 0.9


def test_detect_vectorized():
    det = DetectorSpec.build(0.05, 3)
    out = det.detect(np.array([0.0, det.threshold, det.threshold + 1e-9]))
    np.testing.assert_array_equal(out, [False, False, True])
