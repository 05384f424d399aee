import math

import numpy as np
import pytest

from mcnoma_isac.config import preset_config
from mcnoma_isac.optimizer import (
    greedy_schedule,
    initialize,
    run,
    run_baseline,
)
from mcnoma_isac.oracle import worst_case_leakage
from mcnoma_isac.scenario import build_scenario
from mcnoma_isac.subproblem import AssembleOptions
from mcnoma_isac.uncertainty import build_error_samples

CFG = preset_config("desk-small")


def test_greedy_schedule_valid():
    for seed in range(5):
        real = build_scenario(CFG, seed)
        s = greedy_schedule(real, CFG)
        assert s.shape == (CFG.num_subcarriers, CFG.num_users)
        assert set(np.unique(s)) <= {0.0, 1.0}
        assert np.all(s.sum(axis=1) >= 2)
        assert np.all(s.sum(axis=1) <= CFG.max_cluster_size)
        assert np.all(s.sum(axis=0) >= 1)  # every user covered (rate floor)


def test_initializer_is_leakage_feasible():
    """The first surrogate restriction is anchored at the initializer, so the
    initializer itself must satisfy the enforced leakage caps."""
    for seed in range(3):
        real = build_scenario(CFG, seed)
        samples = build_error_samples(real, CFG, seed)
        sol, aux = initialize(real, CFG, samples, AssembleOptions())
        sol.validate()
        assert sol.total_power() <= CFG.bs_power_max * (1 + 1e-9)
        for k in range(CFG.num_users):
            assert worst_case_leakage(sol, real, CFG, samples, k) <= (
                0.95 * CFG.enforced_leakage_threshold(k) + 1e-9
            )


def test_run_desk_small_end_to_end():
    cfg = CFG.replace(seed=1)
    real = build_scenario(cfg, 1)
    report = run(real, cfg)
    assert report.status == "converged"
    assert report.audit["passed"]
    assert report.min_rate >= cfg.rate_min
    assert report.rounding_ok
    # surrogate objective is monotone along the iterates
    objs = [row["objective"] for row in report.iterates]
    assert all(b >= a - 1e-6 for a, b in zip(objs, objs[1:]))
    d = report.to_json_dict()
    assert d["status"] == "converged"
    assert d["num_iterations"] == len(report.iterates)


def test_run_deterministic():
    cfg = CFG.replace(seed=2)
    real = build_scenario(cfg, 2)
    r1 = run(real, cfg)
    r2 = run(real, cfg)
    assert r1.min_rate == r2.min_rate
    assert [a["objective"] for a in r1.iterates] == [a["objective"] for a in r2.iterates]


def test_infeasible_rate_floor_reported():
    cfg = CFG.replace(seed=0, rate_min=50.0)
    real = build_scenario(cfg, 0)
    report = run(real, cfg)
    assert report.status == "infeasible"


def test_baselines_run_and_joint_wins():
    cfg = CFG.replace(seed=1)
    real = build_scenario(cfg, 1)
    joint = run(real, cfg)
    results = {"joint": joint}
    for kind in ("no-an", "ns-an", "sc-noma"):
        rep = run_baseline(kind, real, cfg)
        assert rep.status in ("converged", "max-iterations", "stalled"), kind
        assert rep.audit["passed"], kind
        results[kind] = rep
    for kind in ("no-an", "ns-an", "sc-noma"):
        assert joint.min_rate >= results[kind].min_rate - 1e-9, kind


def test_unknown_baseline_rejected():
    real = build_scenario(CFG, 0)
    with pytest.raises(ValueError):
        run_baseline("bogus", real, CFG)
