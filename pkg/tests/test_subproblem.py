import numpy as np
import pytest

from mcnoma_isac import conic
from mcnoma_isac.config import preset_config
from mcnoma_isac.fpcore import update_aux
from mcnoma_isac.optimizer import initialize
from mcnoma_isac.scenario import build_scenario
from mcnoma_isac.subproblem import (
    AssembleOptions,
    RankOneRecoveryError,
    assemble,
    extract_solution,
    recover_rank_one,
    round_schedule,
)
from mcnoma_isac.uncertainty import build_error_samples

TINY = preset_config("desk-small").replace(
    num_users=2,
    num_subcarriers=1,
    bs_antennas=2,
    max_cluster_size=2,
    security_level_of_user=(3, 1),
    robust_sample_count=0,
    rate_min=0.5,
    crb_limit=1.0,  # two antennas cannot meet the full-size sensing accuracy
)


def tiny_problem(options=None):
    real = build_scenario(TINY, 0)
    samples = build_error_samples(real, TINY, 0)
    sol, aux = initialize(real, TINY, samples, options or AssembleOptions())
    aux = update_aux(sol, real, TINY, samples, aux)
    return real, samples, sol, aux


GOLDEN_MANIFEST = {
    "psd_blocks": [("V_0", 4), ("Wb_0_0", 4), ("Wb_0_1", 4)],
    "free_scalars": 10,
    "free_vars": [("ell", 1), ("s", 2), ("t", 1), ("u", 2), ("z_0", 4)],
    "num_linear": 16,
    "num_soc": 3,
    "num_exp": 1,
    "num_psd_constraints": 2,
    "linear_tags": [
        "C1a-hi", "C1a-hi", "C1a-lo", "C1a-lo", "C2-hi", "C2-lo", "C3",
        "C4-0-0", "C4-1-0", "C5-0-0", "C5-1-0", "C6-0",
        "epigraph-0-0", "epigraph-1-0", "u-nonneg", "u-nonneg",
    ],
    "soc_tags": ["C12", "u-cone-0-0", "u-cone-0-1"],
    "exp_tags": ["C5-logden-0-0"],
    "psd_tags": ["C7a-0-0", "C7a-0-1"],
}


def test_golden_manifest_tiny_instance():
    """The assembled program structure for a 2-user, 1-subcarrier, 2-antenna
    instance is pinned exactly: one lifted PSD block per beam and for the AN,
    epigraph/rate/leakage rows per user, one exponential cone per subcarrier
    for the leakage log-denominator, and the Big-M sandwich PSD rows."""
    real, samples, sol, aux = tiny_problem()
    prog, _ = assemble(sol, aux, real, samples, TINY)
    assert prog.manifest() == GOLDEN_MANIFEST


def test_manifest_scales_with_samples():
    cfg = TINY.replace(robust_sample_count=2)
    real = build_scenario(cfg, 0)
    samples = build_error_samples(real, cfg, 0)
    sol, aux = initialize(real, cfg, samples, AssembleOptions())
    aux = update_aux(sol, real, cfg, samples, aux)
    prog, _ = assemble(sol, aux, real, samples, cfg)
    m = prog.manifest()
    # nominal + 2 boundary samples -> one exp cone and per-user C4/C5 rows each
    assert m["num_exp"] == 3
    assert sum(t.startswith("C4-") for t in m["linear_tags"]) == 2 * 3
    assert sum(t.startswith("C5-") for t in m["linear_tags"]) == 2 * 3


def test_subproblem_solves_and_extracts():
    # max-min phase: the epigraph objective without the hard rate floor
    opts = AssembleOptions(enforce_rate_min=False)
    real, samples, sol, aux = tiny_problem(opts)
    prog, ctx = assemble(sol, aux, real, samples, TINY, opts)
    res = conic.solve(prog)
    assert res.status == "optimal"
    new_sol = extract_solution(res, ctx, TINY)
    assert new_sol.Wbar.shape == sol.Wbar.shape
    new_sol.validate()
    assert new_sol.total_power() <= TINY.bs_power_max * (1 + 1e-6)


def test_impossible_rate_floor_infeasible():
    cfg = TINY.replace(rate_min=1e3)
    real = build_scenario(cfg, 0)
    samples = build_error_samples(real, cfg, 0)
    sol, aux = initialize(real, cfg, samples, AssembleOptions())
    aux = update_aux(sol, real, cfg, samples, aux)
    prog, _ = assemble(sol, aux, real, samples, cfg)
    res = conic.solve(prog)
    assert res.status in ("infeasible", "numerical-trouble")


def test_nullspace_mode_requires_bases():
    real, samples, sol, aux = tiny_problem()
    with pytest.raises(ValueError):
        assemble(sol, aux, real, samples, TINY, AssembleOptions(an_mode="nullspace"))
    with pytest.raises(ValueError):
        assemble(sol, aux, real, samples, TINY, AssembleOptions(schedule_fixed=True))


def test_no_an_mode_drops_an_block():
    real, samples, sol, aux = tiny_problem(AssembleOptions(an_mode="none"))
    prog, _ = assemble(sol, aux, real, samples, TINY, AssembleOptions(an_mode="none"))
    names = [n for n, _ in prog.manifest()["psd_blocks"]]
    assert "V_0" not in names


def test_round_schedule():
    cfg = preset_config("desk-small")
    s = np.array([[0.96, 0.97, 0.02], [0.01, 0.98, 0.99]])
    s_bin, ok = round_schedule(s, cfg)
    assert ok
    assert np.array_equal(s_bin, np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]))
    assert np.all(s_bin.sum(axis=1) >= 2)
    assert np.all(s_bin.sum(axis=1) <= cfg.max_cluster_size)


def test_recover_rank_one():
    rng = np.random.default_rng(0)
    w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    W = np.outer(w, w.conj())
    v, q = recover_rank_one(W, 0.9)
    assert q == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(np.outer(v, v.conj()), W, atol=1e-8 * np.abs(W).max())
    # full-rank identity: principal component carries 1/4 of the energy, so
    # randomization kicks in and returns a power-preserving candidate
    v2, q2 = recover_rank_one(np.eye(4, dtype=complex), 0.9)
    assert q2 == pytest.approx(0.25, abs=1e-9)
    assert np.linalg.norm(v2) ** 2 == pytest.approx(4.0, rel=1e-9)
    # an always-infeasible scorer raises
    with pytest.raises(RankOneRecoveryError):
        recover_rank_one(
            np.eye(4, dtype=complex), 0.9, scorer=lambda w: (False, 0.0)
        )
    zero, qz = recover_rank_one(np.zeros((3, 3), dtype=complex))
    assert np.all(zero == 0) and qz == 1.0
