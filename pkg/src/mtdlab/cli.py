"""Command line: case inspection, placement, design, certification and campaigns.

    python -m mtdlab info --case case14
    python -m mtdlab placement --case case14 --out out/
    python -m mtdlab design --case case6ww --out out/
    python -m mtdlab certify --case case14 --out out/
    python -m mtdlab campaign --case case6ww --config run.json --out out/
    python -m mtdlab report out/campaign.json

Bus and branch numbers in every output are 1-based. Exit status is 0 on
success, 1 on a module or input error and 3 when a self-check on the
produced artifact fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import attacks as atk
from .campaign import CampaignError, residual_csv, run_campaign
from .config import ConfigError, RunConfig, load_run_config
from .design import (
    DesignError,
    DesignResult,
    is_complete_capable,
    max_mtd,
    max_rank_baseline,
    robust_complete,
    robust_incomplete,
    single_state_norms,
)
from .detector import DetectorSpec, detection_prob
from .grid import CaseError, GridCase, MtdStrategy, PerturbationBoundError, cycle_buses, load_case, one_based, validate_strategy
from .placement import dfacts_placement, placement_k, with_k
from .powerflow import EstimationError, PowerFlowError, solve_powerflow
from .subspace import JacobianPair, RankDeficiencyError, weakest_point

log = logging.getLogger("mtdlab")

MODULE_ERRORS = (CaseError, ConfigError, DesignError, CampaignError, PowerFlowError,
                 EstimationError, atk.AttackError, RankDeficiencyError, PerturbationBoundError,
                 FileNotFoundError, ValueError)


class SelfCheckError(RuntimeError):
    pass


@contextmanager
def phase(name: str):
    t0 = time.perf_counter()
    yield
    log.info("phase %-12s %8.3f s", name, time.perf_counter() - t0)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(_jsonable(v) for v in obj)
    return obj


def _write(out: Path, name: str, payload) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    if isinstance(payload, str):
        path.write_text(payload)
    else:
        path.write_text(json.dumps(_jsonable(payload), indent=2) + "\n")
    log.info("wrote %s", path)
    return path


# ------------------------------------------------------------------ helpers


def _placed_case(cfg: RunConfig, placement=None, tau=None) -> GridCase:
    case = load_case(cfg.case)
    placement = cfg.placement if placement is None else placement
    tau = cfg.tau if tau is None else tau
    if placement == "all":
        return case.with_dfacts(None, tau)
    if placement == "auto":
        return case.with_dfacts(dfacts_placement(case).dfacts_branches, tau)
    idx = [i - 1 for i in placement]
    if max(idx, default=-1) >= case.n_branch:
        raise ConfigError(f"placement names branch {max(idx) + 1} but the case has {case.n_branch}")
    return case.with_dfacts(idx, tau)


def _state(case: GridCase, cfg: RunConfig):
    return solve_powerflow(case) if cfg.state == "powerflow" else None


def _design(case: GridCase, cfg: RunConfig, state) -> tuple[str, DesignResult]:
    designer = cfg.designer
    opt = cfg.optimizer
    if designer == "robust":
        designer = "robust_complete" if is_complete_capable(case, state) else "robust_incomplete"
    if designer == "robust_complete":
        return designer, robust_complete(case, state, opt, cfg.sigma)
    if designer == "robust_incomplete":
        return designer, robust_incomplete(case, state, opt, cfg.sigma)
    if designer == "max_rank":
        c = cfg.campaign
        strategy = max_rank_baseline(case, c.mu_min, c.mu_max, cfg.seed)
        pair = JacobianPair.from_case(case, strategy, state, cfg.sigma)
        rep = weakest_point(pair)
        return designer, DesignResult(strategy, float(np.cos(rep.theta_weak)), rep.theta_weak, rep.k,
                                      complete=rep.k == 0)
    # max_mtd against a random attack of strength 10 drawn from the run seed
    pair0 = JacobianPair.from_case(case, MtdStrategy.zero(case), state, cfg.sigma)
    rng = np.random.default_rng(cfg.seed)
    scn = atk.gen_random_attack(pair0.J_N * cfg.sigma, 10.0, int(rng.integers(1, case.n_state + 1)),
                                rng, cfg.sigma)
    return designer, max_mtd(case, state, scn.a / cfg.sigma, opt, cfg.sigma)


def _design_payload(case: GridCase, cfg: RunConfig, designer: str, res: DesignResult, state) -> dict:
    norms = single_state_norms(case, state, res.strategy, cfg.sigma)
    return {
        "case": case.name,
        "designer": designer,
        "tau": cfg.tau,
        "dfacts_branches": one_based(np.flatnonzero(case.dfacts)),
        "delta_x": res.strategy.delta_x,
        "ratio": np.divide(res.strategy.delta_x, case.x),
        "objective_value": res.objective_value,
        "theta_weak": res.theta_weak,
        "theta_weak_deg": float(np.degrees(res.theta_weak)),
        "k": res.k,
        "iterations": res.iterations,
        "converged": res.converged,
        "complete": res.complete,
        "single_state_feasible": res.feasible,
        "gamma_effective": None if res.gamma_effective is None else
        {str(b + 1): g for b, g in res.gamma_effective.items()},
        "single_state_norms": {str(b + 1): v for b, v in norms.items()},
    }


def _self_check_design(case, cfg, designer, res, state):
    validate_strategy(case, res.strategy)
    if designer == "robust_incomplete":
        k_ref = placement_k(case, _placement_of(case), state)
        if res.k != k_ref:
            raise SelfCheckError(f"design reached k={res.k}, placement minimum is k={k_ref}")
        if res.gamma_effective is not None and cfg.optimizer.single_state != "off":
            norms = single_state_norms(case, state, res.strategy, cfg.sigma)
            sign = 1 if cfg.optimizer.single_state == "upper" else -1
            bad = [b + 1 for b, g in res.gamma_effective.items() if sign * (norms[b] - g) > 0]
            if bad:
                raise SelfCheckError(f"single-state bound violated at buses {bad}")


def _placement_of(case: GridCase):
    from .placement import PlacementResult
    return PlacementResult(tuple(np.flatnonzero(case.dfacts)), frozenset(), frozenset())


# ------------------------------------------------------------------ commands


def cmd_info(cfg: RunConfig, out: Path | None) -> int:
    case = load_case(cfg.case)
    n, m = case.n_state, case.n_branch
    on_cycle = cycle_buses(case)
    excluded = sorted(set(range(case.n_bus)) - on_cycle)
    if m < 2 * n:
        capable = f"no ({m} < {2 * n})"
    else:
        capable = "yes" if is_complete_capable(case.with_dfacts(None, cfg.tau)) else "no (rank-deficient)"
    lines = [
        f"{case.name}: buses={case.n_bus}, n={n}, m={m}, ref bus={case.ref_bus + 1}",
        f"m={m}, 2n={2 * n}, complete-capable: {capable}",
    ]
    if not on_cycle:
        lines.append("all buses cycle-excluded; MTD ineffective")
    elif excluded:
        lines.append("cycle-excluded buses: " + ", ".join(str(b) for b in one_based(excluded)))
    else:
        lines.append("cycle-excluded buses: none")
    print("\n".join(lines))
    if out is not None:
        _write(out, "info.json", {"case": case.name, "n_bus": case.n_bus, "n": n, "m": m,
                                  "ref_bus": case.ref_bus + 1, "complete_capable": capable,
                                  "cycle_excluded": one_based(excluded)})
    return 0


def cmd_placement(cfg: RunConfig, out: Path | None) -> int:
    case = load_case(cfg.case).with_dfacts(None, cfg.tau)
    state = _state(case, cfg)
    with phase("placement"):
        res = with_k(case, dfacts_placement(case), state, cfg.seed)
    payload = {
        "case": case.name,
        "branches": one_based(res.dfacts_branches),
        "n_branches": len(res.dfacts_branches),
        "k_min": res.k_min,
        "covered_buses": one_based(sorted(res.covered_buses)),
        "excluded_buses": one_based(sorted(res.excluded_buses)),
        "residual_loops": [one_based(l) for l in res.residual_loops],
    }
    print(f"{case.name}: {len(res.dfacts_branches)} D-FACTS branches "
          f"{payload['branches']}, k={res.k_min}, excluded buses {payload['excluded_buses']}")
    if res.residual_loops:
        print(f"warning: {len(res.residual_loops)} loop(s) could not be broken")
    if out is not None:
        _write(out, "placement.json", payload)
    missing = cycle_buses(case) - set(res.covered_buses)
    if missing:
        raise SelfCheckError(f"cycle buses not covered: {one_based(sorted(missing))}")
    return 0


def cmd_design(cfg: RunConfig, out: Path | None) -> int:
    grid = [(t, p) for t in (cfg.tau_grid or (cfg.tau,)) for p in (cfg.placements or (cfg.placement,))]
    payloads = []
    for tau, placement in grid:
        sub = RunConfig(**{**cfg.__dict__, "tau": tau, "placement": placement})
        case = _placed_case(sub)
        state = _state(case, sub)
        with phase("design"), warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            designer, res = _design(case, sub, state)
        for w in caught:
            log.warning("%s", w.message)
        _self_check_design(case, sub, designer, res, state)
        payload = _design_payload(case, sub, designer, res, state)
        payload["placement"] = placement
        payloads.append(payload)
        print(f"{case.name} tau={tau} placement={placement}: {designer}, k={res.k}, "
              f"theta_weak={np.degrees(res.theta_weak):.4f} deg, objective={res.objective_value:.8f}"
              + ("" if res.feasible else " (single-state bound relaxed)"))
    if out is not None:
        _write(out, "design.json", payloads[0] if len(payloads) == 1 else payloads)
    return 0


def cmd_certify(cfg: RunConfig, out: Path | None, design_path: str | None) -> int:
    case = _placed_case(cfg)
    state = _state(case, cfg)
    if design_path:
        doc = json.loads(Path(design_path).read_text())
        strategy = validate_strategy(case, MtdStrategy(np.asarray(doc["delta_x"], float)))
        designer = doc.get("designer", "file")
    else:
        with phase("design"), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            designer, res = _design(case, cfg, state)
        strategy = res.strategy
    with phase("certify"):
        pair = JacobianPair.from_case(case, strategy, state, cfg.sigma)
        rep = weakest_point(pair)
        det = DetectorSpec.build(cfg.alpha, pair.m - pair.n)
        scale = np.sqrt(pair.m)  # |a_N| = rho * sqrt(m) for uniform noise
        table = []
        for rho in cfg.certify_rho:
            lam = (rho * scale) ** 2 * np.sin(rep.theta_weak) ** 2
            table.append({"rho": rho, "abs_a_N": rho * scale, "lambda_min": lam,
                          "f_min": detection_prob(lam, det)})
    payload = {"case": case.name, "designer": designer, "k": rep.k, "rank": rep.rank,
               "theta_weak": rep.theta_weak, "theta_weak_deg": float(np.degrees(rep.theta_weak)),
               "alpha": cfg.alpha, "dof": det.dof, "threshold": det.threshold,
               "u_weak": rep.u_weak, "delta_x": strategy.delta_x, "table": table}
    print(f"{case.name}: k={rep.k}, rank={rep.rank}, weakest angle "
          f"u_{rep.k + 1}: {np.degrees(rep.theta_weak):.4f} deg")
    for row in table:
        print(f"  rho={row['rho']:6.2f}  lambda_min={row['lambda_min']:10.4f}  f_min={row['f_min']:.4f}")
    if out is not None:
        _write(out, "certify.json", payload)
    return 0


def _format_table(report_doc: dict) -> str:
    cells = report_doc["cells"]
    lines = [f"case {report_doc['case']}"]
    kinds = sorted({c["kind"] for c in cells})
    for kind in kinds:
        rows = [c for c in cells if c["kind"] == kind]
        strategies = sorted({c["strategy"] for c in rows})
        if kind == "single_state":
            buses = sorted({c["target_bus"] for c in rows})
            lines.append(f"\n{kind} (ADP per target bus)")
            lines.append("bus      " + "".join(f"{s:>12}" for s in strategies))
            for b in buses:
                vals = {c["strategy"]: c["adp"] for c in rows if c["target_bus"] == b}
                lines.append(f"{b:<9}" + "".join(f"{100 * vals.get(s, float('nan')):11.1f}%"
                                                 for s in strategies))
            continue
        buckets = [b for b in atk.BUCKET_LABELS if any(c["bucket"] == b for c in rows)]
        if kind == "clean":
            buckets = [None]
        lines.append(f"\n{kind} (ADP, trials in parentheses)")
        lines.append("bucket     " + "".join(f"{s:>20}" for s in strategies))
        for b in buckets:
            parts = []
            for s in strategies:
                c = next((c for c in rows if c["strategy"] == s and c["bucket"] == b), None)
                parts.append(f"{'-':>20}" if c is None else
                             f"{100 * c['adp']:11.1f}% ({c['trials']:5d})")
            lines.append(f"{str(b or 'none'):<11}" + "".join(parts))
    return "\n".join(lines)


def cmd_campaign(cfg: RunConfig, out: Path | None) -> int:
    grid = [(t, p) for t in (cfg.tau_grid or (cfg.tau,)) for p in (cfg.placements or (cfg.placement,))]
    sweep = []
    for tau, placement in grid:
        case = _placed_case(cfg, placement, tau)
        with phase("campaign"):
            report = run_campaign(case, cfg.campaign)
        for k, v in report.timing.items():
            log.info("  %-10s %8.3f s", k, v)
        doc = report.to_dict()
        doc["tau"] = tau
        doc["placement"] = placement
        print(f"tau={tau} placement={placement}")
        print(_format_table(doc))
        if len(grid) == 1:
            if out is not None:
                _write(out, "campaign.json", doc)
                if cfg.campaign.keep_samples:
                    _write(out, "residuals.csv", residual_csv(report))
        sweep.append({"tau": tau, "placement": placement,
                      **{kind: report.table(kind) for kind in cfg.campaign.kinds}})
    if len(grid) > 1 and out is not None:
        _write(out, "sweep.json", {"case": cfg.case, "rows": sweep})
    return 0


def cmd_report(paths: list[str], out: Path | None) -> int:
    texts = []
    for p in paths:
        doc = json.loads(Path(p).read_text())
        if "cells" not in doc:
            raise ValueError(f"{p} is not a campaign report")
        texts.append(_format_table(doc))
    text = "\n\n".join(texts)
    print(text)
    if out is not None:
        _write(out, "report.txt", text + "\n")
    return 0


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", help="builtin case name or path to a case JSON")
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory for JSON/CSV artifacts")
    common.add_argument("--paper-scale", action="store_true",
                        help="campaign sizes 50 loads / 200 attacks / 20 max-rank draws")
    common.add_argument("-q", "--quiet", action="store_true", help="only print warnings and errors")

    parser = argparse.ArgumentParser(prog="mtdlab", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("info", parents=[common], help="case dimensions and completeness")
    sub.add_parser("placement", parents=[common], help="D-FACTS placement")
    sub.add_parser("design", parents=[common], help="reactance perturbation design")
    p = sub.add_parser("certify", parents=[common], help="weakest point and worst-case detection")
    p.add_argument("--design", help="design.json to certify instead of designing afresh")
    sub.add_parser("campaign", parents=[common], help="Monte-Carlo detection campaign")
    p = sub.add_parser("report", parents=[common], help="tabulate campaign reports")
    p.add_argument("reports", nargs="+", help="campaign.json files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    out = Path(args.out) if args.out else None
    t0 = time.perf_counter()
    try:
        if args.command == "report":
            return cmd_report(args.reports, out)
        cfg = load_run_config(args.config, case=args.case, seed=args.seed,
                              paper_scale=args.paper_scale)
        if args.command == "info":
            return cmd_info(cfg, out)
        if args.command == "placement":
            return cmd_placement(cfg, out)
        if args.command == "design":
            return cmd_design(cfg, out)
        if args.command == "certify":
            return cmd_certify(cfg, out, args.design)
        return cmd_campaign(cfg, out)
    except SelfCheckError as exc:
        print(f"self-check failed: {exc}", file=sys.stderr)
        return 3
    except MODULE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        log.info("total %.3f s", time.perf_counter() - t0)
