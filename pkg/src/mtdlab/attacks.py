"""FDI attack generators and the linear (simplified-model) detection simulator.

Attack strength is measured against the noise level,
``rho = ||a|| / sqrt(sum(sigma**2))``. Simplified-model attacks live in the
active-flow space (``a = J c``); AC attacks are built through the full
measurement function with the attacker's pre-perturbation model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import DetectorSpec
from .grid import GridCase
from .powerflow import StateVector, measurement_function, noise_sigma
from .subspace import JacobianPair, WeakestPointReport

KINDS = ("worst_case", "single_state", "random", "ac_random")
BUCKET_EDGES = (5.0, 7.0, 10.0, 15.0, 20.0, 25.0)
BUCKET_LABELS = ("[5,7)", "[7,10)", "[10,15)", "[15,20)", "[20,25)", "[25,inf)")


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackScenario:
    kind: str
    c: np.ndarray
    a: np.ndarray
    rho: float
    target_bus: int | None = None

    @property
    def bucket(self) -> str | None:
        return strength_bucket(self.rho)

    def normalized(self, sigma) -> np.ndarray:
        return self.a / np.broadcast_to(np.asarray(sigma, float), self.a.shape)


def attack_strength(a, sigma) -> float:
    sigma = np.broadcast_to(np.asarray(sigma, float), np.shape(a))
    return float(np.linalg.norm(a) / np.sqrt(np.sum(sigma**2)))


def strength_bucket(rho: float) -> str | None:
    """Label of the strength range holding ``rho``; None below 5."""
    if not rho >= BUCKET_EDGES[0]:
        return None
    i = int(np.searchsorted(BUCKET_EDGES, rho, side="right")) - 1
    return BUCKET_LABELS[i]


def _rescale(kind, c, a, rho, sigma, target=None) -> AttackScenario:
    cur = attack_strength(a, sigma)
    if cur == 0.0:
        if rho == 0:
            return AttackScenario(kind, np.zeros_like(c), np.zeros_like(a), 0.0, target)
        raise AttackError("attack vector is zero and cannot be scaled")
    f = rho / cur
    return AttackScenario(kind, c * f, a * f, float(rho), target)


def gen_random_attack(J: np.ndarray, rho: float, q: int, seed=None, sigma=0.01) -> AttackScenario:
    """``c`` with ``q`` non-zero standard-normal entries on a uniform support; ``a = J c``."""
    n = J.shape[1]
    if not 1 <= q <= n:
        raise AttackError(f"q must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    for _ in range(100):
        c = np.zeros(n)
        c[rng.choice(n, q, replace=False)] = rng.standard_normal(q)
        a = J @ c
        if np.linalg.norm(a) > 0:
            return _rescale("random", c, a, rho, sigma)
    raise AttackError("could not draw a non-zero attack")


def gen_single_state(J: np.ndarray, col: int, rho: float, sigma=0.01,
                     target_bus: int | None = None) -> AttackScenario:
    """Attack on the single state ``col`` (column index of ``J``)."""
    c = np.zeros(J.shape[1])
    c[col] = 1.0
    a = J @ c
    if not np.any(a):
        raise AttackError(f"Jacobian column {col} is zero")
    return _rescale("single_state", c, a, rho, sigma, target_bus)


def gen_worst_case(report: WeakestPointReport, pair: JacobianPair, rho: float,
                   sigma=0.01) -> AttackScenario:
    """Attack of strength ``rho`` along the weakest point ``u_{k+1}``.

    ``a_N = |a| u`` lies in ``Col(J_N)``; ``c`` is recovered by least squares.
    """
    u = report.u_weak
    sig = np.broadcast_to(np.asarray(sigma, float), u.shape)
    a = sig * u
    c = np.linalg.lstsq(pair.J_N, u, rcond=None)[0]
    return _rescale("worst_case", c, a, rho, sigma)


def gen_ac_attack(case: GridCase, state: StateVector, rng, box=(0.005, 0.15),
                  sigma=0.01, min_rho: float = BUCKET_EDGES[0], max_draws: int = 1000,
                  q: int | None = None) -> AttackScenario:
    """Random AC attack ``a = h(state + c) - h(state)`` on the attacker's model.

    ``c`` perturbs ``q`` random non-reference angles (``q`` uniform in
    ``1..n`` unless given) with values uniform in ``[-b, b]``. ``box`` is
    either a fixed half-width ``b`` or a ``(lo, hi)`` range from which ``b``
    is drawn log-uniformly for every attempt, which spreads the strengths
    over all buckets. Draws below ``min_rho`` are discarded and redrawn.
    """
    rng = np.random.default_rng(rng)
    nr = case.non_ref
    h0 = measurement_function(state, case)
    sig = noise_sigma(case, sigma)
    for _ in range(max_draws):
        qq = int(rng.integers(1, len(nr) + 1)) if q is None else q
        b = np.exp(rng.uniform(*np.log(box))) if np.ndim(box) else float(box)
        c = np.zeros(case.n_bus)
        c[rng.choice(nr, qq, replace=False)] = rng.uniform(-b, b, qq)
        a = measurement_function(state.shifted(c), case) - h0
        rho = attack_strength(a, sig)
        if rho >= min_rho:
            return AttackScenario("ac_random", c, a, rho)
    raise AttackError(f"no AC attack reached rho >= {min_rho} in {max_draws} draws")


def ac_attack_at(case: GridCase, c: np.ndarray, state: StateVector, sigma=0.01) -> AttackScenario:
    """Re-evaluate a state attack ``c`` at another operating state."""
    a = measurement_function(state.shifted(c), case) - measurement_function(state, case)
    return AttackScenario("ac_random", np.asarray(c, float), a,
                          attack_strength(a, noise_sigma(case, sigma)))


def linear_residuals(pair: JacobianPair, a_N: np.ndarray, n_trials: int, rng) -> np.ndarray:
    """Post-perturbation residuals ``||S_N_post (a_N + e)||^2`` for standard-normal noise."""
    rng = np.random.default_rng(rng)
    E = rng.standard_normal((pair.m, n_trials))
    return np.sum(pair.residual_post(E + np.asarray(a_N, float)[:, None]) ** 2, axis=0)


def linear_detection_rate(pair: JacobianPair, a_N, detector: DetectorSpec, n_trials: int,
                          rng) -> float:
    return float(np.mean(detector.detect(linear_residuals(pair, a_N, n_trials, rng))))
