"""Run configuration for the command line (JSON file plus flag overrides).

Schema (every key optional; defaults in brackets)::

    {
      "case": "case14",              # builtin name or path to a case JSON ["case14"]
      "tau": 0.2,                    # D-FACTS perturbation ratio [0.2]
      "placement": "all",            # "all", "auto" (placement algorithm) or 1-based branch list
      "designer": "robust",          # robust | robust_complete | robust_incomplete | max_rank | max_mtd
      "alpha": 0.05,                 # detector false-positive rate
      "sigma": 0.01,                 # measurement noise std (p.u.)
      "state": "powerflow",          # Jacobian operating point: powerflow | flat
      "certify_rho": [5, 7, 10, 15, 20, 25],
      "tau_grid": [0.2],             # campaign sweep over tau ...
      "placements": ["all"],         # ... and over placements
      "optimizer": {"multistart_count": 5, "max_iterations": 10, "tol": 1e-6,
                    "gamma": 0.99, "single_state": "upper", "seed": 0},
      "campaign": {"no_load": 10, "no_attack": 50, "no_maxrank": 5,
                   "designers": ["robust", "max_rank"], "kinds": ["ac_random"],
                   "load_spread": 0.1, "ac_box": [0.005, 0.15], "mu_min": 0.05,
                   "mu_max": 0.2, "rho_values": [5, 7, 10, 15, 20],
                   "single_state_rho": 10, "keep_samples": true, "workers": 1}
    }

``optimizer.gamma`` may also map 1-based bus numbers to per-bus thresholds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .campaign import CampaignConfig
from .design import OptimizerConfig

DESIGNER_CHOICES = ("robust", "robust_complete", "robust_incomplete", "max_rank", "max_mtd")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    case: str = "case14"
    tau: float = 0.2
    placement: object = "all"
    designer: str = "robust"
    alpha: float = 0.05
    sigma: float = 0.01
    state: str = "powerflow"
    seed: int = 0
    certify_rho: tuple = (5.0, 7.0, 10.0, 15.0, 20.0, 25.0)
    tau_grid: tuple = ()
    placements: tuple = ()
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)

    def __post_init__(self):
        if not 0 <= self.tau < 1:
            raise ConfigError("tau must lie in [0, 1)")
        if self.designer not in DESIGNER_CHOICES:
            raise ConfigError(f"designer must be one of {DESIGNER_CHOICES}")
        if self.state not in ("powerflow", "flat"):
            raise ConfigError("state must be 'powerflow' or 'flat'")
        _check_placement(self.placement)
        for p in self.placements:
            _check_placement(p)
        if any(not 0 <= t < 1 for t in self.tau_grid):
            raise ConfigError("tau_grid entries must lie in [0, 1)")


def _check_placement(p):
    if p in ("all", "auto"):
        return
    if isinstance(p, (list, tuple)) and all(isinstance(i, int) and i >= 1 for i in p):
        return
    raise ConfigError(f"placement must be 'all', 'auto' or a list of 1-based branch numbers, got {p!r}")


def _build(cls, data: dict, where: str, **extra):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**{**data, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _optimizer(data: dict) -> OptimizerConfig:
    data = dict(data)
    g = data.get("gamma")
    if isinstance(g, dict):
        data["gamma"] = {int(k) - 1: float(v) for k, v in g.items()}
    return _build(OptimizerConfig, data, "optimizer")


def load_run_config(path=None, *, case=None, seed=None, paper_scale=False) -> RunConfig:
    """Read a JSON config (or defaults) and apply command-line overrides."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be an object")
    data = dict(data)
    opt = _optimizer(data.pop("optimizer", {}))
    camp = dict(data.pop("campaign", {}))
    for key in ("certify_rho", "tau_grid"):
        if key in data:
            data[key] = tuple(float(v) for v in data[key])
    if "placements" in data:
        data["placements"] = tuple(data["placements"])
    if case is not None:
        data["case"] = case
    if seed is not None:
        data["seed"] = int(seed)
        opt = replace(opt, seed=int(seed))
    cfg = _build(RunConfig, data, "config", optimizer=opt)
    if paper_scale:
        camp = {"no_load": 50, "no_attack": 200, "no_maxrank": 20, **{
            k: v for k, v in camp.items() if k not in ("no_load", "no_attack", "no_maxrank")}}
    camp.setdefault("alpha", cfg.alpha)
    camp.setdefault("sigma", cfg.sigma)
    camp.setdefault("state_mode", cfg.state)
    camp["seed"] = cfg.seed if seed is not None or "seed" not in camp else camp["seed"]
    for key in ("rho_values", "designers", "kinds"):
        if key in camp:
            camp[key] = tuple(camp[key])
    cfg.campaign = _build(CampaignConfig, camp, "campaign", optimizer=opt)
    return cfg
