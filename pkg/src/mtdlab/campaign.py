"""Monte-Carlo detection campaigns over sampled load conditions.

For every load condition the pre-perturbation power flow is solved, each
designer produces one or more reactance perturbations, and attacks are
tallied against the chi-square detector. Simplified-model kinds use the
linear residual on the normalized flow Jacobian; ``ac_random`` runs the full
AC pipeline (post-perturbation power flow, attacked measurements, WLS).

Every random draw comes from ``default_rng([seed, load, stream, ...])``, so
reports do not depend on evaluation order or on the number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import attacks as atk
from .design import (
    OptimizerConfig,
    is_complete_capable,
    max_mtd,
    max_rank_baseline,
    robust_complete,
    robust_incomplete,
)
from .detector import DetectorSpec, detection_prob
from .grid import GridCase, MtdStrategy, load_case, one_based
from .powerflow import (
    EstimationError,
    PowerFlowError,
    measurement_count,
    measurement_function,
    MeasurementVector,
    noise_sigma,
    residual_norm,
    solve_powerflow,
    wls_estimate,
)
from .subspace import JacobianPair, weakest_point

log = logging.getLogger(__name__)

DESIGNERS = ("robust", "max_rank", "none", "max_mtd")
SIMPLIFIED_KINDS = ("worst_case", "single_state", "random")
KINDS = SIMPLIFIED_KINDS + ("ac_random", "clean")

# stream ids for derived generators
_LOAD, _DESIGN, _ATTACK, _NOISE = 0, 1, 2, 3


class CampaignError(RuntimeError):
    pass


@dataclass
class CampaignConfig:
    no_load: int = 10
    no_attack: int = 50
    no_maxrank: int = 5
    seed: int = 0
    alpha: float = 0.05
    sigma: float = 0.01
    load_spread: float = 0.1
    ac_box: tuple = (0.005, 0.15)   # log-uniform range of the half-width of c (rad)
    rho_values: tuple = (5.0, 7.0, 10.0, 15.0, 20.0)
    single_state_rho: float = 10.0
    mu_min: float = 0.05
    mu_max: float = 0.2
    designers: tuple = ("robust", "max_rank")
    kinds: tuple = ("ac_random",)
    state_mode: str = "powerflow"        # Jacobian at the solved state or a flat state
    keep_samples: bool = True
    workers: int = 1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        for name in ("no_load", "no_attack", "no_maxrank", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.load_spread < 1:
            raise ValueError("load_spread must lie in [0, 1)")
        box = np.atleast_1d(np.asarray(self.ac_box, float))
        if box.size not in (1, 2) or np.any(box <= 0) or box[0] > box[-1]:
            raise ValueError("ac_box must be a positive half-width or an increasing (lo, hi) pair")
        self.ac_box = float(box[0]) if box.size == 1 else (float(box[0]), float(box[1]))
        bad = set(self.designers) - set(DESIGNERS)
        if bad:
            raise ValueError(f"unknown designers {sorted(bad)}")
        bad = set(self.kinds) - set(KINDS)
        if bad:
            raise ValueError(f"unknown attack kinds {sorted(bad)}")
        if "max_mtd" in self.designers and "ac_random" in self.kinds:
            raise ValueError("max_mtd needs a known attack and only runs on simplified kinds")
        if self.state_mode not in ("powerflow", "flat"):
            raise ValueError("state_mode must be 'powerflow' or 'flat'")
        self.rho_values = tuple(float(r) for r in self.rho_values)

    @classmethod
    def paper_scale(cls, **kw) -> "CampaignConfig":
        kw = {"no_load": 50, "no_attack": 200, "no_maxrank": 20, **kw}
        return cls(**kw)

    def echo(self) -> dict:
        d = asdict(self)
        d["rho_values"] = list(self.rho_values)
        d["designers"] = list(self.designers)
        d["kinds"] = list(self.kinds)
        d["ac_box"] = list(np.atleast_1d(self.ac_box))
        g = d["optimizer"]["gamma"]
        if isinstance(g, dict):
            d["optimizer"]["gamma"] = {str(k): v for k, v in g.items()}
        return d


@dataclass
class CampaignReport:
    case: str
    config: dict
    cells: list
    designs: list
    samples: list
    timing: dict

    def adp(self, strategy: str, kind: str, bucket: str | None = None,
            target_bus: int | None = None) -> float:
        """Pooled detection rate over all matching cells."""
        t = d = 0
        for c in self.cells:
            if c["strategy"] != strategy or c["kind"] != kind:
                continue
            if bucket is not None and c["bucket"] != bucket:
                continue
            if target_bus is not None and c["target_bus"] != target_bus:
                continue
            t += c["trials"]
            d += c["detections"]
        return d / t if t else float("nan")

    def table(self, kind: str = "ac_random") -> dict:
        """``{strategy: {bucket: adp}}`` for one attack kind."""
        out: dict = {}
        for c in self.cells:
            if c["kind"] == kind and c["target_bus"] is None:
                out.setdefault(c["strategy"], {})[c["bucket"]] = c["adp"]
        return out

    def to_dict(self, timing: bool = False) -> dict:
        """Report contents; wall-clock figures are left out unless asked for so
        that reruns with the same seed serialize identically."""
        designs = [{k: v for k, v in d.items() if k != "elapsed"} for d in self.designs]
        out = {"case": self.case, "config": self.config, "cells": self.cells, "designs": designs}
        if timing:
            out["timing"] = self.timing
        return out

    def to_json(self, timing: bool = False, **kw) -> str:
        return json.dumps(self.to_dict(timing), **kw)


SAMPLE_COLUMNS = ("load_idx", "trial_idx", "strategy", "kind", "bucket", "gamma", "detected")


def residual_export(report: CampaignReport) -> list[dict]:
    """Per-trial residual rows (requires ``keep_samples``)."""
    return [dict(zip(SAMPLE_COLUMNS, row)) for row in report.samples]


def residual_csv(report: CampaignReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SAMPLE_COLUMNS)
    for row in report.samples:
        w.writerow([row[0], row[1], row[2], row[3], row[4] if row[4] is not None else "",
                    repr(float(row[5])), int(row[6])])
    return buf.getvalue()


# ------------------------------------------------------------------ internals


def _rng(cfg: CampaignConfig, *key):
    return np.random.default_rng([cfg.seed, *key])


def sample_loads(case: GridCase, cfg: CampaignConfig, load_idx: int):
    rng = _rng(cfg, load_idx, _LOAD)
    f = rng.uniform(1 - cfg.load_spread, 1 + cfg.load_spread, case.n_bus)
    return case.pd * f, case.qd * f


def _design(case: GridCase, designer: str, state, cfg: CampaignConfig, load_idx: int):
    """List of ``(label, strategy, info)`` for one designer at one load."""
    jac_state = state if cfg.state_mode == "powerflow" else None
    opt = replace(cfg.optimizer, seed=int(_rng(cfg, load_idx, _DESIGN).integers(2**31)))
    if designer == "none":
        return [("none", MtdStrategy.zero(case), {})]
    if designer == "robust":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if is_complete_capable(case, jac_state):
                res = robust_complete(case, jac_state, opt, cfg.sigma)
            else:
                res = robust_incomplete(case, jac_state, opt, cfg.sigma)
        return [("robust", res.strategy, {
            "objective": res.objective_value, "theta_weak": res.theta_weak, "k": res.k,
            "converged": res.converged, "feasible": res.feasible, "elapsed": res.elapsed})]
    if designer == "max_rank":
        out = []
        for j in range(cfg.no_maxrank):
            seed = [cfg.seed, load_idx, _DESIGN, 1, j]
            out.append(("max_rank", max_rank_baseline(case, cfg.mu_min, cfg.mu_max, seed), {}))
        return out
    return [("max_mtd", None, {})]  # designed per attack


class _Tally:
    def __init__(self):
        self.cells: dict = {}
        self.samples: list = []

    def add(self, strategy, kind, bucket, target, detected, theory=None):
        key = (strategy, kind, bucket, target)
        c = self.cells.setdefault(key, [0, 0, 0.0, 0])
        c[0] += 1
        c[1] += int(detected)
        if theory is not None:
            c[2] += theory
            c[3] += 1

    def merge(self, other: "_Tally"):
        for key, v in other.cells.items():
            c = self.cells.setdefault(key, [0, 0, 0.0, 0])
            for i in range(4):
                c[i] += v[i]
        self.samples.extend(other.samples)


def _simplified_trials(case, cfg, tally, load_idx, label, s_idx, strategy, state, detector):
    jac_state = state if cfg.state_mode == "powerflow" else None
    pair = JacobianPair.from_case(case, strategy, jac_state, cfg.sigma)
    J = pair.J_N * cfg.sigma  # un-normalized Jacobian (uniform sigma)
    report = weakest_point(pair)
    noise = _rng(cfg, load_idx, _NOISE, s_idx)

    def run(scn: atk.AttackScenario, kind, bucket, target, trial):
        a_N = scn.a / cfg.sigma
        lam = float(np.sum(pair.residual_post(a_N) ** 2))
        e = noise.standard_normal(pair.m)
        gamma = float(np.sum(pair.residual_post(a_N + e) ** 2))
        det = bool(detector.detect(gamma))
        tally.add(label, kind, bucket, target, det, float(detection_prob(lam, detector)))
        if cfg.keep_samples:
            tally.samples.append((load_idx, trial, label, kind, bucket, gamma, det))

    for kind in cfg.kinds:
        if kind not in SIMPLIFIED_KINDS:
            continue
        for t in range(cfg.no_attack):
            for rho in cfg.rho_values:
                bucket = atk.strength_bucket(rho)
                if kind == "worst_case":
                    scn = atk.gen_worst_case(report, pair, rho, cfg.sigma)
                    run(scn, kind, bucket, None, t)
                elif kind == "random":
                    arng = _rng(cfg, load_idx, _ATTACK, 1, t, int(rho * 1000))
                    q = int(arng.integers(1, case.n_state + 1))
                    scn = atk.gen_random_attack(J, rho, q, arng, cfg.sigma)
                    run(scn, kind, bucket, None, t)
        if kind == "single_state":
            rho = cfg.single_state_rho
            for t in range(cfg.no_attack):
                for col, bus in enumerate(case.non_ref):
                    scn = atk.gen_single_state(J, col, rho, cfg.sigma, int(bus))
                    run(scn, kind, atk.strength_bucket(rho), int(bus), t)


def _max_mtd_trials(case, cfg, tally, load_idx, state, detector):
    """Per-attack max-MTD upper bound on the random simplified attacks."""
    jac_state = state if cfg.state_mode == "powerflow" else None
    pair0 = JacobianPair.from_case(case, MtdStrategy.zero(case), jac_state, cfg.sigma)
    J = pair0.J_N * cfg.sigma
    opt = replace(cfg.optimizer, multistart_count=1)
    noise = _rng(cfg, load_idx, _NOISE, DESIGNERS.index("max_mtd") * 1000)
    for t in range(cfg.no_attack):
        for rho in cfg.rho_values:
            if "random" not in cfg.kinds:
                continue
            arng = _rng(cfg, load_idx, _ATTACK, 1, t, int(rho * 1000))
            q = int(arng.integers(1, case.n_state + 1))
            scn = atk.gen_random_attack(J, rho, q, arng, cfg.sigma)
            a_N = scn.a / cfg.sigma
            res = max_mtd(case, jac_state, a_N, opt, cfg.sigma)
            pair = JacobianPair.from_case(case, res.strategy, jac_state, cfg.sigma)
            e = noise.standard_normal(pair.m)
            gamma = float(np.sum(pair.residual_post(a_N + e) ** 2))
            det = bool(detector.detect(gamma))
            bucket = atk.strength_bucket(rho)
            tally.add("max_mtd", "random", bucket, None, det,
                      float(detection_prob(res.objective_value, detector)))
            if cfg.keep_samples:
                tally.samples.append((load_idx, t, "max_mtd", "random", bucket, gamma, det))


def _ac_trials(case, cfg, tally, load_idx, label, s_idx, strategy, state, loads, detector,
               ac_pool):
    try:
        post = solve_powerflow(case, strategy, loads)
    except PowerFlowError as exc:
        raise CampaignError(f"load {load_idx}, {label} #{s_idx}: {exc}") from exc
    sig = noise_sigma(case, cfg.sigma)
    h_post = measurement_function(post, case, strategy)
    noise = _rng(cfg, load_idx, _NOISE, 100 + s_idx)
    for t, c in enumerate(ac_pool):
        if c is None:
            scn = atk.AttackScenario("clean", np.zeros(case.n_bus), np.zeros_like(h_post), 0.0)
            kind = "clean"
        else:
            scn = atk.ac_attack_at(case, c, post, cfg.sigma)
            kind = "ac_random"
        bucket = scn.bucket
        if kind == "ac_random" and bucket is None:
            continue
        z = MeasurementVector(h_post + scn.a + sig * noise.standard_normal(len(sig)), sig)
        try:
            est = wls_estimate(z, case, strategy)
        except EstimationError as exc:
            raise CampaignError(f"load {load_idx}, trial {t}, {label}: {exc}") from exc
        gamma = residual_norm(z, est, case, strategy)
        det = bool(detector.detect(gamma))
        tally.add(label, kind, bucket, None, det)
        if cfg.keep_samples:
            tally.samples.append((load_idx, t, label, kind, bucket, gamma, det))


def _run_load(case: GridCase, cfg: CampaignConfig, load_idx: int):
    t0 = time.perf_counter()
    loads = sample_loads(case, cfg, load_idx)
    try:
        state = solve_powerflow(case, None, loads)
    except PowerFlowError as exc:
        raise CampaignError(f"load {load_idx}: {exc}") from exc
    lin_det = DetectorSpec.build(cfg.alpha, case.n_branch - case.n_state)
    ac_det = DetectorSpec.build(cfg.alpha, measurement_count(case) - 2 * case.n_state)
    tally = _Tally()
    designs = []
    timing = {"design": 0.0, "simplified": 0.0, "ac": 0.0}

    ac_pool = []
    if "ac_random" in cfg.kinds:
        for t in range(cfg.no_attack):
            scn = atk.gen_ac_attack(case, state, _rng(cfg, load_idx, _ATTACK, 2, t),
                                    cfg.ac_box, cfg.sigma)
            ac_pool.append(scn.c)
    if "clean" in cfg.kinds:
        ac_pool.extend([None] * cfg.no_attack)

    for designer in cfg.designers:
        td = time.perf_counter()
        plans = _design(case, designer, state, cfg, load_idx)
        timing["design"] += time.perf_counter() - td
        if designer == "max_mtd":
            ts = time.perf_counter()
            _max_mtd_trials(case, cfg, tally, load_idx, state, lin_det)
            timing["simplified"] += time.perf_counter() - ts
            continue
        for s_idx, (label, strategy, info) in enumerate(plans):
            designs.append({"load_idx": load_idx, "strategy": label, "index": s_idx,
                            "delta_x": strategy.delta_x.tolist(), **info})
            stream = DESIGNERS.index(designer) * 1000 + s_idx
            ts = time.perf_counter()
            _simplified_trials(case, cfg, tally, load_idx, label, stream, strategy, state, lin_det)
            timing["simplified"] += time.perf_counter() - ts
            if ac_pool:
                ta = time.perf_counter()
                _ac_trials(case, cfg, tally, load_idx, label, stream, strategy, state, loads,
                           ac_det, ac_pool)
                timing["ac"] += time.perf_counter() - ta
    timing["total"] = time.perf_counter() - t0
    log.info("load %d done in %.2fs", load_idx, timing["total"])
    return tally, designs, timing


def _bucket_order(b):
    return atk.BUCKET_LABELS.index(b) if b in atk.BUCKET_LABELS else -1


def run_campaign(case, cfg: CampaignConfig | None = None) -> CampaignReport:
    """Run the configured designers and attack kinds over ``no_load`` load samples."""
    cfg = cfg or CampaignConfig()
    case = load_case(case)
    t0 = time.perf_counter()
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(_run_load, [case] * cfg.no_load, [cfg] * cfg.no_load,
                                  range(cfg.no_load)))
    else:
        parts = [_run_load(case, cfg, i) for i in range(cfg.no_load)]
    tally = _Tally()
    designs = []
    timing = {"design": 0.0, "simplified": 0.0, "ac": 0.0}
    for part, d, tm in parts:
        tally.merge(part)
        designs.extend(d)
        for k in timing:
            timing[k] += tm[k]
    timing["wall"] = time.perf_counter() - t0

    cells = []
    for (strategy, kind, bucket, target), (n, det, th, nth) in sorted(
            tally.cells.items(),
            key=lambda kv: (kv[0][0], kv[0][1], _bucket_order(kv[0][2]),
                            -1 if kv[0][3] is None else kv[0][3])):
        cell = {"strategy": strategy, "kind": kind, "bucket": bucket,
                "target_bus": None if target is None else one_based([target])[0],
                "trials": n, "detections": det, "adp": det / n}
        if nth:
            cell["theory"] = th / nth
        cells.append(cell)
    return CampaignReport(case.name, cfg.echo(), cells, designs, tally.samples, timing)
