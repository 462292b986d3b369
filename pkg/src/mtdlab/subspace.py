"""Branch-flow Jacobians, principal angles between their column spaces and the
weakest-point analysis of a reactance perturbation.

Everything operates on noise-normalized quantities: ``J_N = R^{-1/2} J`` and
attack vectors ``a_N = R^{-1/2} a``. Angles are between ``Col(J_N)`` (before
perturbation) and ``Col(J_N_post)`` (after).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import DetectorSpec, detection_prob
from .grid import GridCase, MtdStrategy, branch_admittance, incidence
from .powerflow import StateVector

RANK_RTOL = 1e-8
INTERSECTION_TOL = 1e-8


class RankDeficiencyError(ValueError):
    pass


def branch_flow_jacobian(case: GridCase, strategy: MtdStrategy | None,
                         state: StateVector | None = None) -> np.ndarray:
    """Simplified-AC Jacobian of the from-side active flows w.r.t. non-reference angles.

    ``J = -V G A_r^sin + V B A_r^cos`` where ``V = diag((C_f v) * (C_t v))``,
    ``A_r^sin = diag(sin(A theta)) A_r`` and ``A_r^cos = diag(cos(A theta)) A_r``.
    This is the derivative of ``v_i v_j (g cos + b sin) - g v_i^2`` written with
    the series admittance ``g + jb``; it equals minus the derivative of the
    physical flow returned by :func:`mtdlab.powerflow.measurement_function`.
    A sign flip leaves every column space and non-centrality unchanged.
    """
    return FlowJacobianModel(case, state).jacobian(
        None if strategy is None else strategy.delta_x)


class FlowJacobianModel:
    """Pre-computed pieces of :func:`branch_flow_jacobian` at a fixed operating state.

    Only the admittances change with the perturbation, so a new Jacobian costs
    one row scaling.
    """

    def __init__(self, case: GridCase, state: StateVector | None = None, sigma=1.0):
        state = state if state is not None else StateVector.flat(case)
        inc = incidence(case)
        angle = inc.A @ state.theta
        self.case = case
        self.vv = (inc.C_f @ state.v) * (inc.C_t @ state.v)
        self.A_sin = np.sin(angle)[:, None] * inc.A_r
        self.A_cos = np.cos(angle)[:, None] * inc.A_r
        self.sigma = np.broadcast_to(np.asarray(sigma, float), (case.n_branch,)).copy()
        self.r = case.r
        self.x = case.x

    def jacobian(self, delta_x=None) -> np.ndarray:
        x = self.x if delta_x is None else self.x + np.asarray(delta_x)
        d = self.r**2 + x**2
        g, b = self.r / d, -x / d
        return self.vv[:, None] * (-g[:, None] * self.A_sin + b[:, None] * self.A_cos)

    def normalized(self, delta_x=None) -> np.ndarray:
        return self.jacobian(delta_x) / self.sigma[:, None]


def normalize(J: np.ndarray, R) -> np.ndarray:
    """``R^{-1/2} J`` for a diagonal covariance given as a matrix or variance vector."""
    R = np.asarray(R, float)
    var = np.diag(R) if R.ndim == 2 else np.broadcast_to(R, (J.shape[0],))
    if np.any(var <= 0):
        raise ValueError("covariance must be positive")
    return J / np.sqrt(var)[:, None]


def orthonormal_basis(J: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ``Col(J)``; raises if ``J`` lacks full column rank."""
    Q, Rf = np.linalg.qr(J)
    d = np.abs(np.diag(Rf))
    if d.size and d.min() <= RANK_RTOL * max(d.max(), np.finfo(float).tiny):
        raise RankDeficiencyError("Jacobian is not full column rank")
    return Q


def projector(J: np.ndarray) -> np.ndarray:
    Q = orthonormal_basis(J)
    return Q @ Q.T


@dataclass(frozen=True)
class JacobianPair:
    J_N: np.ndarray
    J_N_post: np.ndarray
    Q: np.ndarray
    Q_post: np.ndarray

    @classmethod
    def from_matrices(cls, J_N, J_N_post) -> "JacobianPair":
        J_N, J_N_post = np.asarray(J_N, float), np.asarray(J_N_post, float)
        if J_N.shape != J_N_post.shape:
            raise ValueError("Jacobians must have the same shape")
        return cls(J_N, J_N_post, orthonormal_basis(J_N), orthonormal_basis(J_N_post))

    @classmethod
    def from_case(cls, case: GridCase, strategy: MtdStrategy, state: StateVector | None = None,
                  sigma=0.01) -> "JacobianPair":
        branch_admittance(case, strategy)  # bound check
        model = FlowJacobianModel(case, state, sigma)
        return cls.from_matrices(model.normalized(), model.normalized(strategy.delta_x))

    @property
    def n(self) -> int:
        return self.J_N.shape[1]

    @property
    def m(self) -> int:
        return self.J_N.shape[0]

    @property
    def P_N(self) -> np.ndarray:
        return self.Q @ self.Q.T

    @property
    def P_N_post(self) -> np.ndarray:
        return self.Q_post @ self.Q_post.T

    @property
    def S_N_post(self) -> np.ndarray:
        return np.eye(self.m) - self.P_N_post

    def residual_post(self, a_N) -> np.ndarray:
        """``S_N_post @ a_N`` without forming the projector (works column-wise)."""
        a_N = np.asarray(a_N, float)
        return a_N - self.Q_post @ (self.Q_post.T @ a_N)


@dataclass(frozen=True)
class PrincipalDecomposition:
    """Principal angles (ascending) and vectors between ``Col(J_N)`` and ``Col(J_N_post)``.

    ``U`` spans ``Col(J_N)``, ``V`` spans ``Col(J_N_post)`` and
    ``U.T @ V = diag(cos(angles))``. ``k`` counts angles that are zero to
    within the intersection tolerance, ``l`` counts right angles and
    ``r = n - k - l``.
    """

    angles: np.ndarray
    U: np.ndarray
    V: np.ndarray
    k: int
    r: int
    l: int

    @property
    def cosines(self) -> np.ndarray:
        return np.cos(self.angles)


def principal_decomposition(pair: JacobianPair, k_tol: float = INTERSECTION_TOL) -> PrincipalDecomposition:
    """Truncated SVD ``P_N P_N_post = U diag(cos) V^T`` computed in the n-dimensional bases.

    With orthonormal bases ``Q``, ``Q'`` the product is ``Q (Q^T Q') Q'^T``, so
    the SVD of the small matrix ``Q^T Q'`` gives exactly the top ``n`` singular
    triplets. Small angles are taken from the sines (singular values of
    ``Q' - Q Q^T Q'``) to avoid the loss of precision of ``arccos`` near 1.
    """
    C = pair.Q.T @ pair.Q_post
    Y, cos, Zt = np.linalg.svd(C)
    cos = np.clip(cos, 0.0, 1.0)
    sin = np.linalg.svd(pair.Q_post - pair.Q @ C, compute_uv=False)[::-1]
    sin = np.clip(sin, 0.0, 1.0)
    angles = np.where(cos**2 < 0.5, np.arccos(cos), np.arcsin(sin))
    angles = np.maximum.accumulate(angles)
    U = pair.Q @ Y
    V = pair.Q_post @ Zt.T
    k = int(np.sum(cos > 1 - k_tol))
    l = int(np.sum(cos < k_tol))
    return PrincipalDecomposition(angles, U, V, k, pair.n - k - l, l)


def composite_rank(pair: JacobianPair, rtol: float = RANK_RTOL) -> int:
    """Numerical rank of ``[J_N, J_N_post]`` with threshold ``rtol * sigma_max``."""
    s = np.linalg.svd(np.hstack([pair.J_N, pair.J_N_post]), compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s.size else 0


@dataclass(frozen=True)
class WeakestPointReport:
    u_weak: np.ndarray
    theta_weak: float
    U1: np.ndarray
    k: int
    rank: int
    f_min: float | None
    decomposition: PrincipalDecomposition

    @property
    def complete(self) -> bool:
        return self.U1.shape[1] == 0


def weakest_point(pair: JacobianPair, attack_magnitude: float | None = None,
                  detector: DetectorSpec | None = None) -> WeakestPointReport:
    """Weakest attack direction outside the intersection and the worst-case detection rate.

    ``k = 2n - rank([J_N, J_N_post])``; the weakest point is the principal
    vector ``u_{k+1}`` and the worst-case non-centrality at strength ``|a|`` is
    ``|a|^2 sin^2(theta_{k+1})``. When ``k == n`` (identical subspaces) there is
    no detectable direction: ``theta_weak`` is 0 and ``f_min`` equals alpha.
    """
    dec = principal_decomposition(pair)
    n = pair.n
    rank = composite_rank(pair)
    k = 2 * n - rank
    idx = min(k, n - 1)
    theta = float(dec.angles[idx]) if k < n else 0.0
    f_min = None
    if detector is not None and attack_magnitude is not None:
        f_min = float(detection_prob(attack_magnitude**2 * np.sin(theta) ** 2, detector))
    return WeakestPointReport(dec.U[:, idx].copy(), theta, dec.U[:, :k].copy(), k, rank, f_min, dec)


def noncentrality(pair: JacobianPair, a_N) -> float | np.ndarray:
    """``||S_N_post a_N||^2`` for a vector or for each column of a matrix."""
    res = pair.residual_post(a_N)
    return np.sum(res**2, axis=0) if res.ndim == 2 else float(res @ res)


def linear_residual(pair: JacobianPair, z_N) -> float | np.ndarray:
    """Residual ``||S_N_post z_N||^2`` of the linear WLS fit on the post-perturbation model."""
    return noncentrality(pair, z_N)


def subspace_distance(U1: np.ndarray, U2: np.ndarray) -> float:
    """``||P_U1 - P_U2||_2`` for orthonormal bases (0 for two empty bases)."""
    if U1.shape[1] != U2.shape[1]:
        return 1.0
    if U1.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(U1 @ U1.T - U2 @ U2.T, 2))
