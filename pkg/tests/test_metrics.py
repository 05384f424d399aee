import math

import numpy as np
import pytest

from mcnoma_isac.config import preset_config
from mcnoma_isac.metrics import (
    BeamSolution,
    beampattern,
    crb_theta,
    interference_covariance,
    jamming_power,
    leakage_rate,
    leakage_sinr,
    min_user_rate,
    mui_power,
    sensing_gain_matrix,
    sensing_quadratic_forms,
    sic_order,
    stronger_users,
    user_rate,
    user_sinr,
)
from mcnoma_isac.scenario import build_scenario, steering_vector

CFG = preset_config("desk-small")
REAL = build_scenario(CFG, 0)


def random_solution(rng, real, power=1.0):
    N, K, V = real.num_subcarriers, real.num_users, real.bs_antennas
    sol = BeamSolution.zeros(N, K, V)
    for n in range(N):
        for k in range(K):
            w = (rng.standard_normal(V) + 1j * rng.standard_normal(V)) * math.sqrt(
                power / (2 * N * (K + 1))
            )
            sol.W[n, k] = np.outer(w, w.conj())
            sol.Wbar[n, k] = sol.W[n, k]
            sol.s[n, k] = 1.0
        a = (rng.standard_normal(V) + 1j * rng.standard_normal(V)) * math.sqrt(
            power / (2 * N * (K + 1))
        )
        sol.V_an[n] = np.outer(a, a.conj())
        sol.z_sense[n] = rng.standard_normal(V) + 1j * rng.standard_normal(V)
    return sol


def test_trace_vs_vector_sinr_agree():
    """Tr(h h^H W) with W = w w^H must equal |h^H w|^2 to near machine
    precision, for both the user SINR and the leakage SINR."""
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(200):
        V = int(rng.integers(2, 8))
        h = rng.standard_normal(V) + 1j * rng.standard_normal(V)
        w = rng.standard_normal(V) + 1j * rng.standard_normal(V)
        Wm = np.outer(w, w.conj())
        trace_form = float(np.real(h.conj() @ Wm @ h))
        vector_form = abs(np.vdot(h, w)) ** 2
        denom = max(abs(vector_form), 1.0)
        worst = max(worst, abs(trace_form - vector_form) / denom)
    assert worst <= 1e-10


def test_sic_order_and_stronger_users_consistent():
    for n in range(REAL.num_subcarriers):
        order = sic_order(REAL, n)
        assert sorted(order) == list(range(REAL.num_users))
        for pos, k in enumerate(order):
            ahead = set(order[:pos])
            assert set(stronger_users(REAL, n, k)) <= ahead


def test_jamming_power():
    h = np.array([3.0 + 4.0j, 0.0])
    assert jamming_power(h, 2.0) == pytest.approx(50.0)
    assert jamming_power(h, 0.0) == 0.0
    with pytest.raises(ValueError):
        jamming_power(h, -1.0)


def test_mui_vanishes_for_strongest_user():
    rng = np.random.default_rng(1)
    sol = random_solution(rng, REAL)
    for n in range(REAL.num_subcarriers):
        strongest = sic_order(REAL, n)[0]
        assert mui_power(sol, REAL, n, strongest) == 0.0


def test_rates_positive_and_additive():
    rng = np.random.default_rng(2)
    sol = random_solution(rng, REAL)
    for k in range(REAL.num_users):
        r = user_rate(sol, REAL, CFG, k)
        parts = sum(
            math.log2(1 + user_sinr(sol, REAL, CFG, n, k))
            for n in range(REAL.num_subcarriers)
        )
        assert r == pytest.approx(parts, rel=1e-12)
        assert r > 0
    assert min_user_rate(sol, REAL, CFG) == pytest.approx(
        min(user_rate(sol, REAL, CFG, k) for k in range(REAL.num_users))
    )


def test_leakage_monotone_in_an_power():
    """More artificial noise can only reduce every leakage SINR."""
    rng = np.random.default_rng(4)
    sol = random_solution(rng, REAL)
    boosted = sol.copy()
    boosted.V_an = sol.V_an * 4.0
    for n in range(REAL.num_subcarriers):
        for k in range(REAL.num_users):
            assert leakage_sinr(boosted, REAL, CFG, n, k) <= leakage_sinr(
                sol, REAL, CFG, n, k
            ) + 1e-12
    for k in range(REAL.num_users):
        assert leakage_rate(boosted, REAL, CFG, k) <= leakage_rate(sol, REAL, CFG, k) + 1e-12


def test_interference_covariance_structure():
    rng = np.random.default_rng(5)
    H = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    R = interference_covariance(H, 0.3, 0.7)
    assert np.allclose(R, R.conj().T)
    assert np.linalg.eigvalsh(R).min() >= 0.7 - 1e-12
    assert np.allclose(interference_covariance(H, 0.0, 0.7), 0.7 * np.eye(4))
    with pytest.raises(ValueError):
        interference_covariance(H, -0.1, 0.7)


def test_sensing_gain_matrix_psd():
    for n in range(REAL.num_subcarriers):
        Q = sensing_gain_matrix(REAL, CFG, n)
        assert np.allclose(Q, Q.conj().T)
        assert np.linalg.eigvalsh(Q).min() >= -1e-10 * abs(Q).max()


def test_crb_scaling_and_unobservable_case():
    rng = np.random.default_rng(6)
    z = rng.standard_normal((REAL.num_subcarriers, REAL.bs_antennas)) + 1j * rng.standard_normal(
        (REAL.num_subcarriers, REAL.bs_antennas)
    )
    crb = crb_theta(z, REAL, CFG)
    assert crb > 0
    # doubling the signal amplitude quarters every quadratic form -> 4x CRB drop
    assert crb_theta(2.0 * z, REAL, CFG) == pytest.approx(crb / 4.0, rel=1e-10)
    assert crb_theta(np.zeros_like(z), REAL, CFG) == math.inf
    forms = sensing_quadratic_forms(z, REAL, CFG)
    assert forms.shape == (REAL.num_subcarriers,)
    assert np.all(forms >= 0)


def test_beampattern_peaks_at_steered_angle():
    V = 8
    theta0 = 0.35
    sol = BeamSolution.zeros(1, 1, V)
    a = steering_vector(theta0, V)
    sol.Wbar[0, 0] = np.outer(a, a.conj())
    sol.W[0, 0] = sol.Wbar[0, 0]
    sol.s[0, 0] = 1.0
    grid = np.linspace(-math.pi / 2, math.pi / 2, 721)
    table = beampattern(sol, grid)
    peak_angle = grid[int(np.argmax(table[:, 1]))]
    assert abs(peak_angle - theta0) < math.radians(1.0)
    assert table[:, 1:].max() == pytest.approx(1.0)
    assert np.all(table[:, 2] == 0.0)  # no AN configured
