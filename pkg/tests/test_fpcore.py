import math

import numpy as np
import pytest

from mcnoma_isac.config import preset_config
from mcnoma_isac.fpcore import (
    AuxState,
    binary_penalty_majorizer,
    chi_update,
    crb_quadratic_linearization,
    crb_threshold,
    leakage_log_bound,
    leakage_powers,
    sample_jamming,
    signal_power,
    surrogate_leakage_exact,
    surrogate_leakage_ub,
    surrogate_user_rate,
    total_received_power,
    update_aux,
    update_gamma,
    update_zq,
    worst_jamming,
)
from mcnoma_isac.metrics import LN2, leakage_sinr, user_sinr
from mcnoma_isac.scenario import build_scenario
from mcnoma_isac.uncertainty import build_error_samples
from tests.test_metrics import random_solution

CFG = preset_config("desk-small")
REAL = build_scenario(CFG, 0)
SAMPLES = build_error_samples(REAL, CFG, 0)


def fresh_state(seed, power=None):
    rng = np.random.default_rng(seed)
    sol = random_solution(rng, REAL, power or CFG.bs_power_max)
    aux = AuxState.zeros(len(SAMPLES), REAL.num_subcarriers, REAL.num_users,
                         CFG.penalty_rho, CFG.penalty_rho_c)
    aux = update_aux(sol, REAL, CFG, SAMPLES, aux)
    return sol, aux


def perturbed(sol, rng, scale=0.3):
    out = sol.copy()
    V = REAL.bs_antennas
    for n in range(REAL.num_subcarriers):
        for k in range(REAL.num_users):
            w = (rng.standard_normal(V) + 1j * rng.standard_normal(V)) * math.sqrt(
                scale * CFG.bs_power_max / (2 * V)
            )
            out.Wbar[n, k] = (1 - scale) * sol.Wbar[n, k] + np.outer(w, w.conj())
            out.W[n, k] = out.Wbar[n, k]
        a = (rng.standard_normal(V) + 1j * rng.standard_normal(V)) * math.sqrt(
            scale * CFG.bs_power_max / (2 * V)
        )
        out.V_an[n] = (1 - scale) * sol.V_an[n] + np.outer(a, a.conj())
    return out


def test_user_rate_surrogate_tight_at_anchor():
    """At its own expansion point the rate surrogate equals the exact
    per-subcarrier rate, per error sample."""
    sol, aux = fresh_state(1)
    for idx in range(len(SAMPLES)):
        for n in range(REAL.num_subcarriers):
            for k in range(REAL.num_users):
                jam = sample_jamming(REAL, CFG, SAMPLES, idx, n, k)
                exact = math.log2(
                    1 + user_sinr(sol, REAL, CFG, n, k,
                                  SAMPLES.samples[idx].dh_eu[n, k])
                )
                sur = surrogate_user_rate(sol, aux, REAL, CFG, n, k, idx, jam)
                assert sur == pytest.approx(exact, abs=1e-8)


def test_user_rate_surrogate_is_lower_bound():
    sol, aux = fresh_state(2)
    rng = np.random.default_rng(3)
    for trial in range(60):
        other = perturbed(sol, rng)
        idx = trial % len(SAMPLES)
        for n in range(REAL.num_subcarriers):
            for k in range(REAL.num_users):
                jam = sample_jamming(REAL, CFG, SAMPLES, idx, n, k)
                exact = math.log2(
                    1 + user_sinr(other, REAL, CFG, n, k,
                                  SAMPLES.samples[idx].dh_eu[n, k])
                )
                sur = surrogate_user_rate(other, aux, REAL, CFG, n, k, idx, jam)
                assert sur <= exact + 1e-9


def test_leakage_surrogate_tight_and_upper_bound():
    """The quadratic-transform leakage surrogate is exact at the anchoring
    auxiliaries, and its linearization majorizes it everywhere."""
    sol, aux = fresh_state(4)
    rng = np.random.default_rng(5)
    # tightness at the worst-case anchor sample
    for n in range(REAL.num_subcarriers):
        for k in range(REAL.num_users):
            best_idx = max(
                range(len(SAMPLES)),
                key=lambda i: leakage_sinr(sol, REAL, CFG, n, k,
                                           SAMPLES.samples[i].dH_be[n]),
            )
            H = SAMPLES.H_be(REAL, best_idx, n)
            exact = math.log2(1 + leakage_sinr(sol, REAL, CFG, n, k,
                                               SAMPLES.samples[best_idx].dH_be[n]))
            sur = surrogate_leakage_exact(sol, aux, REAL, CFG, H, n, k)
            assert sur == pytest.approx(exact, abs=1e-8)
            lin = surrogate_leakage_ub(sol, sol, aux, REAL, CFG, H, n, k)
            assert lin == pytest.approx(sur, abs=1e-10)
    # the linearized form stays above the concave-in-sqrt surrogate
    for _ in range(60):
        other = perturbed(sol, rng)
        for n in range(REAL.num_subcarriers):
            H = SAMPLES.H_be(REAL, 0, n)
            for k in range(REAL.num_users):
                assert surrogate_leakage_ub(
                    sol, other, aux, REAL, CFG, H, n, k
                ) >= surrogate_leakage_exact(other, aux, REAL, CFG, H, n, k) - 1e-9


def test_leakage_log_bound_is_global_majorizer():
    """The log-difference restriction equals the true leakage at the anchor
    and upper-bounds it at arbitrary other solutions."""
    sol, _ = fresh_state(6)
    rng = np.random.default_rng(7)
    for n in range(REAL.num_subcarriers):
        for k in range(REAL.num_users):
            H = SAMPLES.H_be(REAL, 1, n)
            exact = math.log2(1 + leakage_sinr(sol, REAL, CFG, n, k,
                                               SAMPLES.samples[1].dH_be[n]))
            assert leakage_log_bound(sol, sol, REAL, CFG, H, n, k) == pytest.approx(
                exact, abs=1e-10
            )
    for _ in range(100):
        other = perturbed(sol, rng, scale=float(rng.uniform(0.05, 0.95)))
        for n in range(REAL.num_subcarriers):
            H = SAMPLES.H_be(REAL, 1, n)
            for k in range(REAL.num_users):
                exact = math.log2(1 + leakage_sinr(other, REAL, CFG, n, k,
                                                   SAMPLES.samples[1].dH_be[n]))
                assert leakage_log_bound(sol, other, REAL, CFG, H, n, k) >= exact - 1e-9


def test_binary_penalty_majorizer():
    rng = np.random.default_rng(8)
    for _ in range(200):
        s_prev = rng.uniform(0, 1, size=(2, 3))
        s = rng.uniform(0, 1, size=(2, 3))
        exact = float(np.sum(s - s * s))
        assert binary_penalty_majorizer(s, s_prev) >= exact - 1e-12
    s = rng.uniform(0, 1, size=(2, 3))
    assert binary_penalty_majorizer(s, s) == pytest.approx(float(np.sum(s - s * s)))


def test_aux_updates_nonnegative_and_tight():
    sol, aux = fresh_state(9)
    assert np.all(aux.alpha >= 0) and np.all(aux.x_aux >= 0)
    assert np.all(aux.gamma >= 0) and np.all(aux.zq_aux >= 0)
    assert aux.chi_c >= 0
    # gamma anchors at the max sampled leakage SINR
    gamma = update_gamma(sol, REAL, CFG, SAMPLES)
    for n in range(REAL.num_subcarriers):
        for k in range(REAL.num_users):
            best = max(
                leakage_sinr(sol, REAL, CFG, n, k, SAMPLES.samples[i].dH_be[n])
                for i in range(len(SAMPLES))
            )
            assert gamma[n, k] == pytest.approx(best, rel=1e-9)


def test_worst_jamming_dominates_samples():
    for n in range(REAL.num_subcarriers):
        for k in range(REAL.num_users):
            w = worst_jamming(REAL, CFG, SAMPLES, n, k)
            for idx in range(len(SAMPLES)):
                assert w >= sample_jamming(REAL, CFG, SAMPLES, idx, n, k)


def test_crb_linearization_minorizes_quadratic():
    rng = np.random.default_rng(10)
    V = REAL.bs_antennas
    from mcnoma_isac.metrics import sensing_gain_matrix

    Qs = [sensing_gain_matrix(REAL, CFG, n) for n in range(REAL.num_subcarriers)]
    z_prev = rng.standard_normal((REAL.num_subcarriers, V)) + 1j * rng.standard_normal(
        (REAL.num_subcarriers, V)
    )
    lin = crb_quadratic_linearization(z_prev, Qs)
    for _ in range(100):
        z = rng.standard_normal((REAL.num_subcarriers, V)) + 1j * rng.standard_normal(
            (REAL.num_subcarriers, V)
        )
        for n, (const, b) in enumerate(lin):
            exact = float(np.real(z[n].conj() @ Qs[n] @ z[n]))
            bound = 2.0 * float(np.real(b.conj() @ z[n])) - const
            assert bound <= exact + 1e-9 * max(1.0, abs(exact))
            at_anchor = 2.0 * float(np.real(b.conj() @ z_prev[n])) - const
        exact_anchor = float(np.real(z_prev[n].conj() @ Qs[n] @ z_prev[n]))
        assert at_anchor == pytest.approx(exact_anchor, rel=1e-10)
    with pytest.raises(ValueError):
        crb_quadratic_linearization(z_prev, [-np.eye(V)] * REAL.num_subcarriers)


def test_chi_update_threshold():
    sol, _ = fresh_state(11)
    thr = crb_threshold(CFG)
    assert thr > 0
    assert chi_update(sol, REAL, CFG, SAMPLES) >= 0
    zero_sol = sol.copy()
    zero_sol.z_sense = np.zeros_like(sol.z_sense)
    zero_sol.W = np.zeros_like(sol.W)
    zero_sol.Wbar = np.zeros_like(sol.Wbar)
    zero_sol.V_an = np.zeros_like(sol.V_an)
    assert chi_update(zero_sol, REAL, CFG, SAMPLES) == 0.0
