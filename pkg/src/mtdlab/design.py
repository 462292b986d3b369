"""Reactance-perturbation design: max-MTD bound, robust designs and the max-rank baseline.

Decision variables are normalized ratios ``s`` in ``[-1, 1]`` on the D-FACTS
branches, ``delta_x = s * tau * x``; branches without a device never move, so
the D-FACTS limits hold by construction. Every solver is a multistart SLSQP
run on a monotone transform of the stated objective (an angle instead of a
cosine) because the raw norms sit within 1e-3 of 1 and stall the line search.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import minimize

from .grid import GridCase, MtdStrategy, cycle_buses, validate_strategy
from .powerflow import StateVector
from .subspace import (
    FlowJacobianModel,
    JacobianPair,
    composite_rank,
    orthonormal_basis,
    principal_decomposition,
    subspace_distance,
)

log = logging.getLogger(__name__)


class DesignError(RuntimeError):
    pass


@dataclass
class OptimizerConfig:
    multistart_count: int = 5
    max_iterations: int = 10          # outer iterations of the incomplete design
    tol: float = 1e-6                 # subspace distance between successive intersections
    local_maxiter: int = 200
    local_ftol: float = 1e-10
    seed: int = 0
    gamma: float | Mapping[int, float] = 0.99
    single_state: str = "upper"       # "upper": norm <= gamma, "lower": norm >= gamma, "off"

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.multistart_count < 1:
            raise ValueError("multistart_count must be at least 1")
        if self.single_state not in ("upper", "lower", "off"):
            raise ValueError("single_state must be 'upper', 'lower' or 'off'")
        gammas = self.gamma.values() if isinstance(self.gamma, Mapping) else [self.gamma]
        if not all(0 < g < 1 for g in gammas):
            raise ValueError("gamma must lie in (0, 1)")

    def gamma_for(self, bus: int) -> float:
        if isinstance(self.gamma, Mapping):
            return float(self.gamma.get(bus, 0.99))
        return float(self.gamma)


@dataclass
class DesignResult:
    strategy: MtdStrategy
    objective_value: float
    theta_weak: float
    k: int
    iterations: int = 1
    converged: bool = True
    complete: bool = True
    history: list = field(default_factory=list)
    elapsed: float = 0.0
    feasible: bool = True                 # single-state constraint met at the configured gamma
    gamma_effective: dict | None = None   # per-bus bound actually imposed (after relaxation)


class _Problem:
    """Jacobian model plus the normalized decision-variable mapping."""

    def __init__(self, case: GridCase, state: StateVector | None, sigma):
        self.case = case
        self.model = FlowJacobianModel(case, state, sigma)
        self.J_N = self.model.normalized()
        self.Q = orthonormal_basis(self.J_N)
        self.active = np.flatnonzero(case.dfacts & (case.tau > 0))
        self.limit = (case.tau * case.x)[self.active]
        self.col_norm = np.linalg.norm(self.J_N, axis=0)

    @property
    def dim(self) -> int:
        return len(self.active)

    def delta_x(self, s) -> np.ndarray:
        dx = np.zeros(self.case.n_branch)
        dx[self.active] = np.clip(s, -1.0, 1.0) * self.limit
        return dx

    def Q_post(self, s) -> np.ndarray:
        return np.linalg.qr(self.model.normalized(self.delta_x(s)))[0]

    def pair(self, s) -> JacobianPair:
        return JacobianPair.from_matrices(self.J_N, self.model.normalized(self.delta_x(s)))

    def single_state(self, Qp) -> np.ndarray:
        """``||P_N^i P_N_post||`` for every non-reference bus column."""
        return np.linalg.norm(Qp.T @ self.J_N, axis=0) / self.col_norm


def _angle(c):
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def _single_state_buses(case: GridCase) -> np.ndarray:
    """Column indices (into the non-reference ordering) of buses on a cycle."""
    on_cycle = cycle_buses(case)
    return np.array([j for j, bus in enumerate(case.non_ref) if bus in on_cycle], dtype=int)


def _single_state_angles(problem: _Problem, cols):
    def angles(s):
        vals = problem.single_state(problem.Q_post(s))[cols]
        return np.arccos(np.clip(vals, -1.0, 1.0))
    return angles


def _constraints(problem: _Problem, config: OptimizerConfig, gamma=None):
    """SLSQP inequality for the single-state bound, written on the angle scale.

    ``gamma`` overrides the configured per-bus thresholds (array over the
    cycle buses). The target is tightened by 1e-8 rad so accepted points
    satisfy the bound with non-negative slack.
    """
    if config.single_state == "off":
        return [], None
    cols = _single_state_buses(problem.case)
    if cols.size == 0:
        return [], None
    if gamma is None:
        gamma = np.array([config.gamma_for(int(b)) for b in problem.case.non_ref[cols]])
    sign = 1.0 if config.single_state == "upper" else -1.0
    target = np.arccos(gamma) + sign * 1e-8
    angles = _single_state_angles(problem, cols)

    def slack_of(s):
        return sign * (angles(s) - target)

    return [{"type": "ineq", "fun": slack_of}], slack_of


def _max_min_single_state(problem: _Problem, config: OptimizerConfig):
    """Perturbation maximizing the smallest single-state angle (feasibility phase)."""
    cols = _single_state_buses(problem.case)
    angles = _single_state_angles(problem, cols)
    rng = np.random.default_rng([config.seed, 7])
    bounds = [(-1.0, 1.0)] * problem.dim + [(0.0, np.pi / 2)]
    best_t, best_s = -1.0, np.zeros(problem.dim)
    for _ in range(config.multistart_count):
        s0 = rng.uniform(-1, 1, problem.dim)
        x0 = np.r_[s0, angles(s0).min()]
        res = minimize(lambda x: -x[-1], x0, method="SLSQP", bounds=bounds,
                       constraints=[{"type": "ineq", "fun": lambda x: angles(x[:-1]) - x[-1]}],
                       options={"maxiter": config.local_maxiter, "ftol": 1e-12})
        s = np.clip(res.x[:-1], -1, 1)
        t = float(angles(s).min())
        if t > best_t:
            best_t, best_s = t, s
    return best_s, best_t


def _multistart(problem: _Problem, fun: Callable, config: OptimizerConfig, starts,
                constraints=(), slack=None):
    """Run SLSQP from each start; keep the feasible result with the lowest value.

    Ties keep the earliest start. Infeasible results are only used when no
    start ends feasible (smallest violation wins).
    """
    bounds = [(-1.0, 1.0)] * problem.dim
    best = None
    for i, s0 in enumerate(starts):
        res = minimize(fun, s0, method="SLSQP", bounds=bounds, constraints=list(constraints),
                       options={"maxiter": config.local_maxiter, "ftol": config.local_ftol})
        s = np.clip(res.x, -1, 1)
        val = float(fun(s))
        viol = 0.0 if slack is None else float(np.maximum(-slack(s), 0).max(initial=0.0))
        key = (viol > 1e-9, viol if viol > 1e-9 else 0.0, val, i)
        if best is None or key < best[0]:
            best = (key, s, res)
    return best[1], best[0][0] is False


def _starts(problem: _Problem, config: OptimizerConfig, tag: int, first=None):
    rng = np.random.default_rng([config.seed, tag])
    starts = [] if first is None else [np.asarray(first, float)]
    while len(starts) < config.multistart_count:
        starts.append(rng.uniform(-1, 1, problem.dim))
    return starts


def _check(case: GridCase, strategy: MtdStrategy) -> MtdStrategy:
    return validate_strategy(case, strategy)


# ------------------------------------------------------------------ designs


def max_rank_baseline(case: GridCase, mu_min: float = 0.05, mu_max: float = 0.2,
                      seed=None) -> MtdStrategy:
    """Random perturbation with ``mu_min x <= |dx| <= mu_max x`` on every D-FACTS branch.

    Both bounds are capped at the branch's own ratio limit ``tau``.
    """
    if not 0 < mu_min <= mu_max:
        raise ValueError("need 0 < mu_min <= mu_max")
    rng = np.random.default_rng(seed)
    m = case.n_branch
    hi = np.minimum(mu_max, case.tau)
    lo = np.minimum(mu_min, hi)
    ratio = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0], m)
    dx = np.where(case.dfacts, ratio * case.x, 0.0)
    return _check(case, MtdStrategy(dx))


def max_mtd(case: GridCase, state: StateVector | None, a_N, config: OptimizerConfig | None = None,
            sigma=0.01) -> DesignResult:
    """Perturbation maximizing ``||S_N_post a_N||^2`` for a known normalized attack."""
    config = config or OptimizerConfig()
    t0 = time.perf_counter()
    a_N = np.asarray(a_N, float)
    problem = _Problem(case, state, sigma)
    zero = MtdStrategy.zero(case)

    def value(s):
        Qp = problem.Q_post(s)
        r = a_N - Qp @ (Qp.T @ a_N)
        return float(r @ r)

    if problem.dim == 0:
        pair = JacobianPair.from_matrices(problem.J_N, problem.J_N)
        return DesignResult(zero, value(np.zeros(0)), 0.0, 2 * pair.n - composite_rank(pair),
                            elapsed=time.perf_counter() - t0)
    scale = max(float(a_N @ a_N), 1e-300)
    s, _ = _multistart(problem, lambda s: -value(s) / scale, config,
                       _starts(problem, config, 1, first=np.zeros(problem.dim)))
    best = value(s)
    if best < value(np.zeros(problem.dim)):
        s, best = np.zeros(problem.dim), value(np.zeros(problem.dim))
    strategy = _check(case, MtdStrategy(problem.delta_x(s)))
    pair = problem.pair(s)
    k = 2 * pair.n - composite_rank(pair)
    dec = principal_decomposition(pair)
    return DesignResult(strategy, best, float(dec.angles[min(k, pair.n - 1)]), k,
                        elapsed=time.perf_counter() - t0)


def robust_complete(case: GridCase, state: StateVector | None, config: OptimizerConfig | None = None,
                    sigma=0.01) -> DesignResult:
    """Minimize ``||P_N P_N_post||`` (the cosine of the smallest principal angle).

    Requires ``m >= 2n``; if the optimum still has a nontrivial intersection
    the result is flagged ``complete=False`` and a warning is issued.
    """
    config = config or OptimizerConfig()
    t0 = time.perf_counter()
    if case.n_branch < 2 * case.n_state:
        raise DesignError(
            f"complete configuration impossible: m={case.n_branch} < 2n={2 * case.n_state}")
    problem = _Problem(case, state, sigma)

    def cos_max(s):
        return float(np.linalg.svd(problem.Q.T @ problem.Q_post(s), compute_uv=False)[0])

    if problem.dim == 0:
        s = np.zeros(0)
    else:
        s, _ = _multistart(problem, lambda s: -_angle(cos_max(s)), config,
                           _starts(problem, config, 2))
    strategy = _check(case, MtdStrategy(problem.delta_x(s)))
    pair = problem.pair(s)
    k = 2 * pair.n - composite_rank(pair)
    dec = principal_decomposition(pair)
    result = DesignResult(strategy, cos_max(s), float(dec.angles[0]), k, complete=k == 0,
                          elapsed=time.perf_counter() - t0)
    if k > 0:
        warnings.warn(f"robust_complete on {case.name}: intersection dimension k={k} at the optimum; "
                      "placement does not admit a complete configuration")
    return result


def single_state_norms(case: GridCase, state: StateVector | None, strategy: MtdStrategy,
                       sigma=0.01) -> dict[int, float]:
    """``||P_N^i P_N_post||`` for every bus on a cycle (bus index -> value)."""
    _check(case, strategy)
    model = FlowJacobianModel(case, state, sigma)
    J_N = model.normalized()
    Qp = orthonormal_basis(model.normalized(strategy.delta_x))
    vals = np.linalg.norm(Qp.T @ J_N, axis=0) / np.linalg.norm(J_N, axis=0)
    cols = _single_state_buses(case)
    return {int(case.non_ref[j]): float(min(vals[j], 1.0)) for j in cols}


def _intersection(problem: _Problem, s):
    pair = problem.pair(s)
    k = 2 * pair.n - composite_rank(pair)
    dec = principal_decomposition(pair)
    theta = float(dec.angles[k]) if k < pair.n else 0.0
    return dec.U[:, :k], k, theta


def robust_incomplete(case: GridCase, state: StateVector | None, config: OptimizerConfig | None = None,
                      sigma=0.01) -> DesignResult:
    """Iterative robust design for a grid whose subspaces must intersect.

    1. Warm start: minimize ``||P_N P_N_post||_F`` under the D-FACTS limits and
       the single-state constraint.
    2. Locate the intersection basis ``U1`` at the current point.
    3. Minimize ``||P_N P_N_post - U1 U1^T||`` with ``U1`` frozen, relocate
       ``U1`` and repeat until the intersection moves less than ``tol``
       (projector distance) or ``max_iterations`` is reached.

    The returned ``objective_value`` is ``cos(theta_{k+1})`` at the returned
    point. Without convergence the best feasible iterate is returned with
    ``converged=False``.
    """
    config = config or OptimizerConfig()
    t0 = time.perf_counter()
    problem = _Problem(case, state, sigma)
    n = case.n_state
    if problem.dim == 0:
        U1, k, theta = _intersection(problem, np.zeros(0))
        return DesignResult(MtdStrategy.zero(case), float(np.cos(theta)), theta, k,
                            converged=True, complete=k == 0, elapsed=time.perf_counter() - t0)
    cons, slack = _constraints(problem, config)

    def fro_sines(s):
        C = problem.Q.T @ problem.Q_post(s)
        return -(n - float(np.sum(C * C)))

    s, feasible = _multistart(problem, fro_sines, config, _starts(problem, config, 3),
                              cons, slack)
    configured_ok = feasible
    cols = _single_state_buses(case)
    gamma_eff = None
    if cons:
        gamma_eff = np.array([config.gamma_for(int(b)) for b in case.non_ref[cols]])
    if not feasible and config.single_state == "upper":
        # The bound is out of reach under the D-FACTS limits: impose the best
        # achievable uniform bound instead and flag the result.
        s_mm, t_mm = _max_min_single_state(problem, config)
        relaxed = float(np.cos(t_mm - 1e-6))
        gamma_eff = np.maximum(gamma_eff, relaxed)
        warnings.warn(f"robust_incomplete on {case.name}: single-state bound infeasible; "
                      f"relaxed to {relaxed:.6f}")
        cons, slack = _constraints(problem, config, gamma_eff)
        s, feasible = _multistart(problem, fro_sines, config,
                                  _starts(problem, config, 3, first=s_mm), cons, slack)
    U1, k, theta = _intersection(problem, s)
    history = [{"step": 0, "cos_weak": float(np.cos(theta)), "k": k, "feasible": feasible}]
    log.debug("warm start: k=%d cos(theta_k+1)=%.8f", k, np.cos(theta))
    best = (not feasible, -theta, s)
    converged = False
    step = 0
    while step < config.max_iterations:
        step += 1
        QtU1 = problem.Q.T @ U1
        W = QtU1  # U1 expressed in the basis Q

        def frozen(s, W=W):
            Qp = problem.Q_post(s)
            C = problem.Q.T @ Qp
            M = C @ Qp.T - W @ (W.T @ problem.Q.T)
            return -_angle(np.linalg.norm(M, 2))

        s_new, feasible = _multistart(problem, frozen, config,
                                      _starts(problem, config, 100 + step, first=s)[:1],
                                      cons, slack)
        U1_new, k_new, theta_new = _intersection(problem, s_new)
        dist = subspace_distance(U1_new, U1)
        history.append({"step": step, "cos_weak": float(np.cos(theta_new)), "k": k_new,
                        "feasible": feasible, "distance": dist})
        log.debug("step %d: k=%d cos(theta_k+1)=%.8f dist=%.2e", step, k_new,
                  np.cos(theta_new), dist)
        s, U1, k, theta = s_new, U1_new, k_new, theta_new
        cand = (not feasible, -theta, s)
        if cand[:2] < best[:2]:
            best = cand
        if dist <= config.tol:
            converged = True
            break
    if not converged:
        s = best[2]
        U1, k, theta = _intersection(problem, s)
    strategy = _check(case, MtdStrategy(problem.delta_x(s)))
    if gamma_eff is not None:
        gamma_eff = {int(b): float(g) for b, g in zip(case.non_ref[cols], gamma_eff)}
    return DesignResult(strategy, float(np.cos(theta)), theta, k, iterations=step,
                        converged=converged, complete=k == 0, history=history,
                        elapsed=time.perf_counter() - t0,
                        feasible=configured_ok and best[0] is False,
                        gamma_effective=gamma_eff)


def is_complete_capable(case: GridCase, state: StateVector | None = None, seed=0) -> bool:
    """True when a random perturbation on the placement reaches ``rank = 2n``."""
    if case.n_branch < 2 * case.n_state:
        return False
    if not case.dfacts.any():
        return False
    mu_max = float(case.tau[case.dfacts].min())
    if mu_max <= 0:
        return False
    strategy = max_rank_baseline(case, mu_max / 4, mu_max, seed)
    pair = JacobianPair.from_case(case, strategy, state)
    return composite_rank(pair) == 2 * case.n_state


def robust_design(case: GridCase, state: StateVector | None, config: OptimizerConfig | None = None,
                  sigma=0.01) -> DesignResult:
    """Dispatch to the complete or incomplete robust design."""
    if is_complete_capable(case, state):
        return robust_complete(case, state, config, sigma)
    return robust_incomplete(case, state, config, sigma)
