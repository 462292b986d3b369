"""How tight can the single-state bound be on case14?

A request for an unreachable bound makes the designer fall back to the
largest achievable minimum angle and report it in ``gamma_effective``. The
script prints that best cosine per perturbation ratio and the detection rate
it allows for a single-state attack at rho=10.
"""

import warnings

import numpy as np

from mtdlab.design import OptimizerConfig, robust_incomplete
from mtdlab.detector import DetectorSpec, critical_lambda, detection_prob
from mtdlab.grid import load_case
from mtdlab.powerflow import solve_powerflow

case = load_case("case14")
state = solve_powerflow(case)
det = DetectorSpec.build(0.05, case.n_branch - case.n_state)
rho, m = 10.0, case.n_branch
print(f"lambda needed for 85% detection: {critical_lambda(0.85, det):.2f}")
print(f"{'tau':>5} {'best max cos':>13} {'lambda':>8} {'f(lambda)':>10}")
for tau in (0.1, 0.2, 0.3, 0.5):
    sub = case.with_dfacts(None, tau)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = robust_incomplete(sub, state, OptimizerConfig(gamma=0.5, max_iterations=3))
    cos = max(res.gamma_effective.values())
    lam = rho**2 * m * (1 - cos**2)
    print(f"{tau:5.2f} {cos:13.5f} {lam:8.2f} {100 * detection_prob(lam, det):9.1f}%")
