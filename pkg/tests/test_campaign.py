import csv
import io
import json

import numpy as np
import pytest

from mtdlab.campaign import (
    SAMPLE_COLUMNS,
    CampaignConfig,
    residual_csv,
    residual_export,
    run_campaign,
    sample_loads,
)
from mtdlab.design import OptimizerConfig

FAST = OptimizerConfig(multistart_count=1, max_iterations=2)


@pytest.fixture(scope="module")
def small6():
    cfg = CampaignConfig(no_load=2, no_attack=20, no_maxrank=2, optimizer=FAST,
                         kinds=("ac_random", "clean", "worst_case", "random"))
    return run_campaign("case6ww", cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        CampaignConfig(no_load=0)
    with pytest.raises(ValueError):
        CampaignConfig(alpha=1.0)
    with pytest.raises(ValueError):
        CampaignConfig(designers=("oracle",))
    with pytest.raises(ValueError):
        CampaignConfig(kinds=("laser",))
    with pytest.raises(ValueError):
        CampaignConfig(designers=("max_mtd",), kinds=("ac_random",))
    with pytest.raises(ValueError):
        CampaignConfig(ac_box=(0.2, 0.1))
    assert CampaignConfig(ac_box=0.1).ac_box == 0.1
    big = CampaignConfig.paper_scale()
    assert (big.no_load, big.no_attack, big.no_maxrank) == (50, 200, 20)


def test_report_structure(small6):
    rep = small6
    assert rep.case == "case6ww"
    strategies = {c["strategy"] for c in rep.cells}
    assert strategies == {"robust", "max_rank"}
    for c in rep.cells:
        assert 0 <= c["adp"] <= 1 and c["trials"] > 0
        assert c["adp"] == c["detections"] / c["trials"]
    # one robust design per load, no_maxrank baselines per load
    labels = [d["strategy"] for d in rep.designs]
    assert labels.count("robust") == 2 and labels.count("max_rank") == 4
    tab = rep.table("ac_random")
    assert set(tab) == strategies
    assert json.loads(rep.to_json())["case"] == "case6ww"
    assert "timing" in rep.to_dict(timing=True)


def test_clean_false_positive_rate(small6):
    for s in ("robust", "max_rank"):
        assert small6.adp(s, "clean") <= 0.2


def test_theory_tracks_simulation(small6):
    for c in small6.cells:
        if c["kind"] == "worst_case":
            assert "theory" in c
            assert abs(c["adp"] - c["theory"]) < 4 * np.sqrt(0.25 / c["trials"]) + 0.02


def test_robust_beats_max_rank_worst_case(small6):
    for b in ("[10,15)", "[15,20)", "[20,25)"):
        assert small6.adp("robust", "worst_case", b) >= small6.adp("max_rank", "worst_case", b)


def test_determinism_and_workers():
    cfg = CampaignConfig(no_load=2, no_attack=5, no_maxrank=1, optimizer=FAST, seed=9)
    a = run_campaign("case6ww", cfg)
    b = run_campaign("case6ww", cfg)
    assert a.to_json() == b.to_json()
    c = run_campaign("case6ww", CampaignConfig(**{**cfg.__dict__, "workers": 2}))
    assert a.to_dict()["cells"] == c.to_dict()["cells"]
    assert residual_csv(a) == residual_csv(c)


def test_seed_changes_results():
    cfg = CampaignConfig(no_load=1, no_attack=5, no_maxrank=1, optimizer=FAST,
                         designers=("max_rank",))
    a = run_campaign("case6ww", cfg)
    b = run_campaign("case6ww", CampaignConfig(**{**cfg.__dict__, "seed": 1}))
    assert residual_csv(a) != residual_csv(b)


def test_residual_export(small6):
    rows = residual_export(small6)
    assert rows and set(rows[0]) == set(SAMPLE_COLUMNS)
    parsed = list(csv.DictReader(io.StringIO(residual_csv(small6))))
    assert len(parsed) == len(rows)
    assert float(parsed[0]["gamma"]) == rows[0]["gamma"]
    det = sum(int(r["detected"]) for r in parsed
              if r["strategy"] == "robust" and r["kind"] == "ac_random")
    cells = [c for c in small6.cells if c["strategy"] == "robust" and c["kind"] == "ac_random"]
    assert det == sum(c["detections"] for c in cells)


def test_max_mtd_upper_bound():
    cfg = CampaignConfig(no_load=1, no_attack=10, optimizer=FAST, kinds=("random",),
                         designers=("max_mtd", "max_rank"), no_maxrank=1, rho_values=(10.0,))
    rep = run_campaign("case6ww", cfg)
    assert rep.adp("max_mtd", "random") >= rep.adp("max_rank", "random") - 0.1


def test_single_state_targets(case14):
    cfg = CampaignConfig(no_load=1, no_attack=4, optimizer=FAST, kinds=("single_state",),
                         designers=("max_rank",), no_maxrank=1)
    rep = run_campaign(case14, cfg)
    targets = {c["target_bus"] for c in rep.cells}
    assert targets == set(range(2, 15))


def test_sample_loads(case14):
    cfg = CampaignConfig(load_spread=0.1)
    pd, qd = sample_loads(case14, cfg, 0)
    nz = case14.pd != 0
    ratio = pd[nz] / case14.pd[nz]
    assert np.all((ratio >= 0.9) & (ratio <= 1.1))
    np.testing.assert_allclose(qd[nz] / case14.qd[nz], ratio)
    np.testing.assert_array_equal(pd, sample_loads(case14, cfg, 0)[0])
