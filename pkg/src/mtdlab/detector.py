"""Chi-square bad-data detector and non-central detection probability."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc, gammainccinv, gammaln


@dataclass(frozen=True)
class DetectorSpec:
    alpha: float
    dof: int
    threshold: float

    @classmethod
    def build(cls, alpha: float, dof: int) -> "DetectorSpec":
        return cls(alpha, int(dof), chi2_threshold(alpha, dof))

    def detect(self, gamma) -> np.ndarray | bool:
        return np.asarray(gamma) > self.threshold


def chi2_sf(x: float, dof: float) -> float:
    """Upper-tail mass of the central chi-square distribution."""
    return float(gammaincc(dof / 2.0, x / 2.0)) if x > 0 else 1.0


def _chi2_pdf(x, dof):
    k = dof / 2.0
    return math.exp((k - 1) * math.log(x / 2.0) - x / 2.0 - gammaln(k)) / 2.0


def chi2_threshold(alpha: float, dof: int) -> float:
    """Threshold ``tau`` with ``P(chi2_dof > tau) = alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if dof < 1:
        raise ValueError("dof must be at least 1")
    x = 2.0 * float(gammainccinv(dof / 2.0, alpha))
    # Newton polish on the tail equation
    for _ in range(5):
        if x <= 0:
            break
        err = chi2_sf(x, dof) - alpha
        if abs(err) < 1e-14:
            break
        x += err / _chi2_pdf(x, dof)
    return x


def _ncx2_sf(x: float, dof: int, lam: float, rtol: float) -> float:
    if lam <= 0:
        return chi2_sf(x, dof)
    # both tails are bounded separately; keep their sum well inside rtol
    rtol = rtol * 1e-3
    mu = lam / 2.0
    j0 = int(mu)

    def term(j):
        logw = -mu + j * math.log(mu) - gammaln(j + 1)
        w = math.exp(logw)
        return w, w * chi2_sf(x, dof + 2 * j)

    total = 0.0
    j = j0
    while True:
        w, t = term(j)
        total += t
        j += 1
        ratio = mu / (j + 1)
        if w * ratio / (1 - ratio) <= rtol * total or w == 0.0:
            break
    # below the mode the weights shrink at least geometrically with ratio j/mu
    for j in range(j0 - 1, -1, -1):
        w, t = term(j)
        total += t
        ratio = j / mu
        if w * ratio / (1 - ratio) <= rtol * total:
            break
    return min(total, 1.0)


def detection_prob(lam, detector: DetectorSpec, rtol: float = 1e-10):
    """Probability that a non-central chi-square(dof, lam) residual exceeds the threshold.

    Evaluated as the Poisson(lam/2)-weighted mixture of central chi-square
    tails ``P(chi2_{dof+2j} > tau)``, summed outward from the Poisson mode
    until the remaining weight is below ``rtol`` of the accumulated value.
    """
    lam_arr = np.asarray(lam, float)
    if np.any(lam_arr < 0):
        raise ValueError("non-centrality must be non-negative")
    out = np.array([_ncx2_sf(detector.threshold, detector.dof, float(v), rtol)
                    for v in lam_arr.ravel()]).reshape(lam_arr.shape)
    return float(out) if out.ndim == 0 else out


def critical_lambda(beta: float, detector: DetectorSpec, tol: float = 1e-6) -> float:
    """Smallest non-centrality with detection probability at least ``beta``."""
    if beta <= detector.alpha:
        return 0.0
    if beta >= 1:
        raise ValueError("beta must be below 1")
    lo, hi = 0.0, 1.0
    while detection_prob(hi, detector) < beta:
        lo, hi = hi, 2 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if detection_prob(mid, detector) >= beta:
            hi = mid
        else:
            lo = mid
    return hi


def min_attack_strength(beta: float, detector: DetectorSpec, n_channels: int) -> float:
    """Smallest attack strength that can reach detection ``beta`` under isotropic noise."""
    return math.sqrt(critical_lambda(beta, detector) / n_channels)
