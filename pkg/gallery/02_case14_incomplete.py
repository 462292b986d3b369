"""Incomplete configuration on case14: placement, intersection and single-state attacks.

case14 has m=20 branches for n=13 states, so pre- and post-perturbation
column spaces always share a 6-dimensional subspace. Bus 8 hangs off the
grid on a single branch and no reactance change can reveal attacks on it.
"""

import warnings

import numpy as np

from mtdlab.campaign import CampaignConfig, run_campaign
from mtdlab.design import OptimizerConfig, robust_incomplete
from mtdlab.grid import load_case
from mtdlab.placement import dfacts_placement, with_k
from mtdlab.powerflow import solve_powerflow

case = load_case("case14")
state = solve_powerflow(case)

pl = with_k(case, dfacts_placement(case), state)
print("placement (1-based):", [i + 1 for i in pl.dfacts_branches], "k =", pl.k_min,
      "excluded buses:", sorted(b + 1 for b in pl.excluded_buses))

with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    res = robust_incomplete(case, state)
for w in caught:
    print("warning:", w.message)
print(f"robust design: k={res.k}, theta_(k+1)={np.degrees(res.theta_weak):.3f} deg, "
      f"single-state bound met: {res.feasible}")

rows = {}
for mode in ("upper", "off"):
    cfg = CampaignConfig(no_load=3, no_attack=50, kinds=("single_state",), designers=("robust",),
                         optimizer=OptimizerConfig(single_state=mode), keep_samples=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = run_campaign(case, cfg)
    rows[mode] = {b: rep.adp("robust", "single_state", target_bus=b) for b in range(2, 15)}
print("\nsingle-state ADP at rho=10 (%)")
print("bus  with bound  without")
for b in range(2, 15):
    print(f"{b:>3}  {100 * rows['upper'][b]:10.1f}  {100 * rows['off'][b]:7.1f}")
