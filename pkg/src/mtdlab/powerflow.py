"""Full-AC measurement model, Newton-Raphson power flow and WLS estimation.

Measurements are stacked as ``[P_inj; Q_inj; P_flow; Q_flow]`` with
injections at every bus and from-side flows on every branch, so
``p = 2 * n_bus + 2 * m``. Line charging, shunts and taps are neglected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridCase, MtdStrategy, branch_admittance, incidence


class PowerFlowError(RuntimeError):
    pass


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class StateVector:
    v: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        for name in ("v", "theta"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.v <= 0):
            raise ValueError("voltage magnitudes must be positive")

    @classmethod
    def flat(cls, case: GridCase) -> "StateVector":
        v = np.ones(case.n_bus)
        v[case.ref_bus] = case.v_ref
        return cls(v, np.zeros(case.n_bus))

    @property
    def complex(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)

    def shifted(self, d_theta) -> "StateVector":
        return StateVector(self.v, self.theta + d_theta)


@dataclass(frozen=True)
class MeasurementVector:
    z: np.ndarray
    sigma: np.ndarray

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.sigma**2)


def measurement_count(case: GridCase) -> int:
    return 2 * case.n_bus + 2 * case.n_branch


def noise_sigma(case: GridCase, sigma=0.01) -> np.ndarray:
    return np.broadcast_to(np.asarray(sigma, float), (measurement_count(case),)).copy()


def admittance_matrices(case: GridCase, strategy: MtdStrategy | None = None):
    """Bus admittance ``Ybus`` and from-side branch admittance ``Yf``."""
    g, b = branch_admittance(case, strategy)
    y = g + 1j * b
    A = incidence(case).A
    Yf = y[:, None] * A
    Ybus = A.T @ Yf
    return Ybus, Yf


def measurement_function(state: StateVector, case: GridCase,
                         strategy: MtdStrategy | None = None, *, _Y=None) -> np.ndarray:
    """Noiseless measurements ``h(state)``."""
    Ybus, Yf = _Y if _Y is not None else admittance_matrices(case, strategy)
    V = state.complex
    S_bus = V * np.conj(Ybus @ V)
    S_f = V[case.from_bus] * np.conj(Yf @ V)
    return np.concatenate([S_bus.real, S_bus.imag, S_f.real, S_f.imag])


def _derivatives(V, Ybus, Yf, from_bus):
    I_bus = Ybus @ V
    I_f = Yf @ V
    E = V / np.abs(V)
    dS_dVa = 1j * (V[:, None] * np.conj(np.diag(I_bus) - Ybus * V[None, :]))
    dS_dVm = V[:, None] * np.conj(Ybus * E[None, :]) + np.diag(np.conj(I_bus) * E)
    Vf = V[from_bus]
    Cf = np.zeros((len(from_bus), len(V)), dtype=complex)
    Cf[np.arange(len(from_bus)), from_bus] = 1.0
    dSf_dVa = 1j * (np.conj(I_f)[:, None] * Cf * V[None, :]
                    - Vf[:, None] * np.conj(Yf * V[None, :]))
    dSf_dVm = (np.conj(I_f)[:, None] * Cf * E[None, :]
               + Vf[:, None] * np.conj(Yf * E[None, :]))
    return dS_dVa, dS_dVm, dSf_dVa, dSf_dVm


def measurement_jacobian(state: StateVector, case: GridCase,
                         strategy: MtdStrategy | None = None, *, _Y=None) -> np.ndarray:
    """Jacobian of :func:`measurement_function` w.r.t. ``[theta, v]`` of non-reference buses."""
    Ybus, Yf = _Y if _Y is not None else admittance_matrices(case, strategy)
    dS_dVa, dS_dVm, dSf_dVa, dSf_dVm = _derivatives(state.complex, Ybus, Yf, case.from_bus)
    nr = case.non_ref
    return np.block([
        [dS_dVa.real[:, nr], dS_dVm.real[:, nr]],
        [dS_dVa.imag[:, nr], dS_dVm.imag[:, nr]],
        [dSf_dVa.real[:, nr], dSf_dVm.real[:, nr]],
        [dSf_dVa.imag[:, nr], dSf_dVm.imag[:, nr]],
    ])


# ---------------------------------------------------------------- power flow


def generator_dispatch(case: GridCase, pd=None) -> np.ndarray:
    """Per-bus active generation of the PV units, scaled with total load."""
    pd = case.pd if pd is None else np.asarray(pd, float)
    base = case.pd.sum()
    scale = pd.sum() / base if base > 0 else 1.0
    pg = np.zeros(case.n_bus)
    for gen in case.generators:
        if gen.bus != case.ref_bus:
            pg[gen.bus] += gen.pg * scale
    return pg


def solve_powerflow(case: GridCase, strategy: MtdStrategy | None = None, loads=None,
                    tol: float = 1e-8, max_iter: int = 20) -> StateVector:
    """Newton-Raphson power flow with the reference bus as slack.

    ``loads`` is an optional ``(pd, qd)`` pair in p.u.; generator buses other
    than the reference hold their voltage set point (PV), every other bus is
    PQ. Raises :class:`PowerFlowError` if the mismatch is not below ``tol``
    within ``max_iter`` iterations.
    """
    pd, qd = (case.pd, case.qd) if loads is None else (np.asarray(loads[0], float),
                                                        np.asarray(loads[1], float))
    Ybus, Yf = admittance_matrices(case, strategy)
    p_spec = generator_dispatch(case, pd) - pd
    q_spec = -qd

    pv = sorted({g.bus for g in case.generators if g.bus != case.ref_bus})
    pq = [i for i in range(case.n_bus) if i != case.ref_bus and i not in pv]
    pvpq = np.array(sorted(pv + pq), dtype=int)
    pq = np.array(pq, dtype=int)

    vm = np.ones(case.n_bus)
    for gen in case.generators:
        vm[gen.bus] = gen.vg
    va = np.zeros(case.n_bus)
    V = vm * np.exp(1j * va)

    def mismatch(V):
        S = V * np.conj(Ybus @ V)
        return np.concatenate([S.real[pvpq] - p_spec[pvpq], S.imag[pq] - q_spec[pq]])

    F = mismatch(V)
    for _ in range(max_iter):
        if np.linalg.norm(F, np.inf) < tol:
            break
        dS_dVa, dS_dVm, _, _ = _derivatives(V, Ybus, Yf, case.from_bus)
        Jac = np.block([
            [dS_dVa.real[np.ix_(pvpq, pvpq)], dS_dVm.real[np.ix_(pvpq, pq)]],
            [dS_dVa.imag[np.ix_(pq, pvpq)], dS_dVm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(Jac, -F)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError("singular power-flow Jacobian") from exc
        va[pvpq] += dx[:len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        if not np.all(np.isfinite(vm)) or np.any(vm <= 0):
            raise PowerFlowError("power flow diverged (non-positive voltage)")
        V = vm * np.exp(1j * va)
        F = mismatch(V)
    if not np.linalg.norm(F, np.inf) < tol:
        raise PowerFlowError(
            f"power flow did not converge in {max_iter} iterations "
            f"(mismatch {np.linalg.norm(F, np.inf):.3e})")
    va = va - va[case.ref_bus]
    return StateVector(vm, va)


# ------------------------------------------------------- measurements and SE


def simulate_measurements(state: StateVector, case: GridCase, strategy: MtdStrategy | None,
                          sigma, rng=None) -> MeasurementVector:
    """``z = h(state) + e`` with ``e ~ N(0, diag(sigma**2))``.

    ``rng`` is a numpy Generator or an integer seed.
    """
    rng = np.random.default_rng(rng)
    sigma = noise_sigma(case, sigma)
    h = measurement_function(state, case, strategy)
    return MeasurementVector(h + sigma * rng.standard_normal(h.shape), sigma)


def residual_norm(z: MeasurementVector, estimate: StateVector, case: GridCase,
                  strategy: MtdStrategy | None = None) -> float:
    """Weighted residual ``||R^{-1/2} (z - h(estimate))||^2``."""
    r = (z.z - measurement_function(estimate, case, strategy)) / z.sigma
    return float(r @ r)


def wls_estimate(z: MeasurementVector, case: GridCase, strategy: MtdStrategy | None = None,
                 init: StateVector | None = None, tol: float = 1e-8,
                 max_iter: int = 20) -> StateVector:
    """Gauss-Newton weighted least squares state estimate.

    The reference bus magnitude and angle stay at their ``init`` values (flat
    start by default), so ``2 * n`` states are estimated.
    """
    if np.any(z.sigma <= 0):
        raise EstimationError("WLS needs strictly positive noise standard deviations")
    if len(z.z) < 2 * case.n_state:
        raise EstimationError("fewer measurements than states")
    state = init if init is not None else StateVector.flat(case)
    Y = admittance_matrices(case, strategy)
    v, th = state.v.copy(), state.theta.copy()
    nr = case.non_ref
    w = 1.0 / z.sigma
    for it in range(max_iter):
        cur = StateVector(v, th)
        r = (z.z - measurement_function(cur, case, _Y=Y)) * w
        H = measurement_jacobian(cur, case, _Y=Y) * w[:, None]
        dx, _, rank, _ = np.linalg.lstsq(H, r, rcond=None)
        if rank < H.shape[1]:
            raise EstimationError("rank-deficient gain matrix (unobservable)")
        th[nr] += dx[:len(nr)]
        v[nr] += dx[len(nr):]
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise EstimationError("state estimation diverged")
        if np.linalg.norm(dx, np.inf) < tol:
            return StateVector(v, th)
    raise EstimationError(f"state estimation did not converge in {max_iter} iterations")
