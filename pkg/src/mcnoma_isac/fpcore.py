"""Fractional-programming machinery: auxiliary updates, majorizers, penalties.

The per-user rate log2(1+SINR) is rewritten with a Lagrangian-dual auxiliary
(alpha for users, gamma for the Eve) and the remaining ratio with a quadratic-
transform auxiliary (x for users, zq for the Eve).  Closed-form optima:

    alpha* = SINR            x* = sqrt((1+alpha)*num) / total
    gamma* = SINR_E          zq* = sqrt((1+gamma)*num_E) / total_E

where `total` is the full received power (signal + interference + noise),
which makes the transforms tight: at the optima the surrogate equals the
exact rate.  Surrogates are evaluated in nats and scaled by 1/ln2 at the end
so the closed forms above are the exact argmax of the implemented functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import (
    LN2,
    BeamSolution,
    _gram_trace,
    _quad,
    jamming_power,
    mui_power,
    sensing_gain_matrix,
    stronger_users,
)
from .scenario import ChannelRealization
from .uncertainty import ErrorSampleSet


@dataclass
class AuxState:
    alpha: np.ndarray    # (S, N, K) >= 0, one slice per CSI error sample
    gamma: np.ndarray    # (N, K) >= 0
    x_aux: np.ndarray    # (S, N, K) >= 0
    zq_aux: np.ndarray   # (N, K) >= 0
    chi_c: float
    rho: float
    rho_c: float

    @staticmethod
    def zeros(S: int, N: int, K: int, rho: float, rho_c: float) -> "AuxState":
        return AuxState(
            alpha=np.zeros((S, N, K)),
            gamma=np.zeros((N, K)),
            x_aux=np.zeros((S, N, K)),
            zq_aux=np.zeros((N, K)),
            chi_c=0.0,
            rho=rho,
            rho_c=rho_c,
        )


# ---------------------------------------------------------------------------
# scalar building blocks shared with the subproblem assembly


def sample_jamming(
    realization: ChannelRealization, config, samples: ErrorSampleSet, idx: int, n: int, k: int
) -> float:
    """P_E * ||h_eu + dh||^2 at one error sample."""
    return jamming_power(samples.h_eu(realization, idx, n, k), config.eve_power)


def worst_jamming(
    realization: ChannelRealization, config, samples: ErrorSampleSet, n: int, k: int
) -> float:
    """max over error samples of P_E * ||h_eu + dh||^2 (the C4 inner min)."""
    return max(
        sample_jamming(realization, config, samples, idx, n, k)
        for idx in range(len(samples))
    )


def signal_power(sol: BeamSolution, realization, n: int, k: int) -> float:
    """eta_{n,k} = Tr(H_{n,k} Wbar_{n,k}), clamped at 0 against solver noise."""
    return max(0.0, _quad(realization.h_user[n, k], sol.Wbar[n, k]))


def total_received_power(
    sol: BeamSolution, realization, config, n: int, k: int, jam: float
) -> float:
    """Signal + MUI + jamming + AN + noise at user k on subcarrier n."""
    h = realization.h_user[n, k]
    return (
        signal_power(sol, realization, n, k)
        + mui_power(sol, realization, n, k)
        + jam
        + _quad(h, sol.V_an[n])
        + config.noise_user
    )


def leakage_powers(
    sol: BeamSolution, realization, config, H_be: np.ndarray, n: int, k: int
) -> tuple[float, float]:
    """(xi_n, xi_d): Eve receive power of user k's stream and of AN + noise."""
    xi_n = max(0.0, _gram_trace(H_be, sol.Wbar[n, k]))
    xi_d = _gram_trace(H_be, sol.V_an[n]) + config.noise_eve
    return xi_n, xi_d


# ---------------------------------------------------------------------------
# closed-form auxiliary updates


def update_alpha(
    sol: BeamSolution, realization, config, samples: ErrorSampleSet
) -> np.ndarray:
    """alpha*_{s,n,k} = SINR at each sampled Eve->user error.

    Anchoring per sample keeps every per-sample rate surrogate tight at the
    previous iterate, which is what makes the outer loop monotone.
    """
    N, K = sol.s.shape
    S = len(samples)
    alpha = np.zeros((S, N, K))
    for n in range(N):
        for k in range(K):
            eta = signal_power(sol, realization, n, k)
            for idx in range(S):
                jam = sample_jamming(realization, config, samples, idx, n, k)
                total = total_received_power(sol, realization, config, n, k, jam)
                alpha[idx, n, k] = eta / (total - eta)
    return alpha


def update_gamma(
    sol: BeamSolution, realization, config, samples: ErrorSampleSet
) -> np.ndarray:
    """gamma*_{n,k} = leakage SINR at the sampled worst-case BS->Eve error."""
    N, K = sol.s.shape
    gamma = np.zeros((N, K))
    for n in range(N):
        for k in range(K):
            best = 0.0
            for idx in range(len(samples)):
                xi_n, xi_d = leakage_powers(
                    sol, realization, config, samples.H_be(realization, idx, n), n, k
                )
                best = max(best, xi_n / xi_d)
            gamma[n, k] = best
    return gamma


def update_x(
    sol: BeamSolution, realization, config, alpha: np.ndarray, samples: ErrorSampleSet
) -> np.ndarray:
    """x*_{s,n,k} = sqrt((1+alpha)*eta) / total received power, per sample."""
    N, K = sol.s.shape
    S = len(samples)
    x = np.zeros((S, N, K))
    for n in range(N):
        for k in range(K):
            eta = signal_power(sol, realization, n, k)
            if eta <= 0.0:
                continue
            for idx in range(S):
                jam = sample_jamming(realization, config, samples, idx, n, k)
                total = total_received_power(sol, realization, config, n, k, jam)
                x[idx, n, k] = math.sqrt((1.0 + alpha[idx, n, k]) * eta) / total
    return x


def update_zq(
    sol: BeamSolution, realization, config, gamma: np.ndarray, samples: ErrorSampleSet
) -> np.ndarray:
    """zq*_{n,k} analogous to x*, at the leakage-worst-case sampled error."""
    N, K = sol.s.shape
    zq = np.zeros((N, K))
    for n in range(N):
        for k in range(K):
            best, best_ratio = None, -1.0
            for idx in range(len(samples)):
                xi_n, xi_d = leakage_powers(
                    sol, realization, config, samples.H_be(realization, idx, n), n, k
                )
                if xi_n / xi_d > best_ratio:
                    best_ratio, best = xi_n / xi_d, (xi_n, xi_d)
            xi_n, xi_d = best
            if xi_n <= 0.0:
                continue
            zq[n, k] = math.sqrt((1.0 + gamma[n, k]) * xi_n) / (xi_n + xi_d)
    return zq


def update_aux(
    sol: BeamSolution, realization, config, samples: ErrorSampleSet, aux: AuxState
) -> AuxState:
    """All closed-form updates, in dependency order: (alpha,gamma) -> (x,zq) -> chi."""
    alpha = update_alpha(sol, realization, config, samples)
    gamma = update_gamma(sol, realization, config, samples)
    return AuxState(
        alpha=alpha,
        gamma=gamma,
        x_aux=update_x(sol, realization, config, alpha, samples),
        zq_aux=update_zq(sol, realization, config, gamma, samples),
        chi_c=chi_update(sol, realization, config, samples),
        rho=aux.rho,
        rho_c=aux.rho_c,
    )


# ---------------------------------------------------------------------------
# surrogates


def surrogate_user_rate(
    sol: BeamSolution,
    aux: AuxState,
    realization,
    config,
    n: int,
    k: int,
    sample_idx: int,
    error_sample_jam: float,
) -> float:
    """Per-subcarrier concave lower bound on log2(1 + SINR_{n,k}), bit/s/Hz.

    `error_sample_jam` is the jamming power P_E*||h_eu+dh||^2 of the error
    sample the constraint is instantiated at; `sample_idx` selects the
    matching auxiliary slice.
    """
    a = aux.alpha[sample_idx, n, k]
    x = aux.x_aux[sample_idx, n, k]
    eta = signal_power(sol, realization, n, k)
    total = total_received_power(sol, realization, config, n, k, error_sample_jam)
    val = (
        math.log1p(a)
        - a
        + 2.0 * x * math.sqrt((1.0 + a) * eta)
        - x * x * total
    )
    return val / LN2


def surrogate_user_rate_total(
    sol, aux, realization, config, k: int, sample_idx: int, jam_per_subcarrier
) -> float:
    return sum(
        surrogate_user_rate(
            sol, aux, realization, config, n, k, sample_idx, jam_per_subcarrier[n]
        )
        for n in range(realization.num_subcarriers)
    )


def surrogate_leakage_exact(
    sol: BeamSolution, aux: AuxState, realization, config, H_be: np.ndarray, n: int, k: int
) -> float:
    """Quadratic-transform surrogate of log2(1 + SINR^E) before linearization."""
    g = aux.gamma[n, k]
    z = aux.zq_aux[n, k]
    xi_n, xi_d = leakage_powers(sol, realization, config, H_be, n, k)
    val = (
        math.log1p(g)
        - g
        + 2.0 * z * math.sqrt((1.0 + g) * xi_n)
        - z * z * (xi_n + xi_d)
    )
    return val / LN2


def surrogate_leakage_ub(
    sol_prev: BeamSolution,
    sol: BeamSolution,
    aux: AuxState,
    realization,
    config,
    H_be: np.ndarray,
    n: int,
    k: int,
) -> float:
    """Affine upper bound on the leakage surrogate, tangent at sol_prev.

    Only the concave 2*z*sqrt((1+gamma)*xi_n) term is linearized; the linear
    -z^2*(xi_n + xi_d) term is kept exact.
    """
    g = aux.gamma[n, k]
    z = aux.zq_aux[n, k]
    xi_n_prev, _ = leakage_powers(sol_prev, realization, config, H_be, n, k)
    xi_n, xi_d = leakage_powers(sol, realization, config, H_be, n, k)
    if xi_n_prev > 0.0:
        grad = z * math.sqrt((1.0 + g) / xi_n_prev)
        sqrt_part = 2.0 * z * math.sqrt((1.0 + g) * xi_n_prev) + grad * (xi_n - xi_n_prev)
    else:
        sqrt_part = 0.0  # subgradient choice at the sqrt kink
    val = math.log1p(g) - g + sqrt_part - z * z * (xi_n + xi_d)
    return val / LN2


def leakage_log_bound(
    sol_prev: BeamSolution,
    sol: BeamSolution,
    realization,
    config,
    H_be: np.ndarray,
    n: int,
    k: int,
) -> float:
    """Globally valid convex upper bound on log2(1 + leakage SINR), bit/s/Hz.

    Writes the leakage as log2(xi_n + xi_d) - log2(xi_d), replaces the first
    (concave) term by its tangent at sol_prev, and keeps the second exact.
    Equals the true leakage at sol == sol_prev and majorizes it everywhere.
    """
    xi_n_prev, xi_d_prev = leakage_powers(sol_prev, realization, config, H_be, n, k)
    xi_n, xi_d = leakage_powers(sol, realization, config, H_be, n, k)
    xt_prev = xi_n_prev + xi_d_prev
    xt = xi_n + xi_d
    return math.log2(xt_prev) + (xt - xt_prev) / (xt_prev * LN2) - math.log2(xi_d)


def binary_penalty_majorizer(s: np.ndarray, s_prev: np.ndarray) -> float:
    """Convex majorizer of sum(s - s^2), tangent at s_prev."""
    return float(np.sum(s - s_prev**2 - 2.0 * s_prev * (s - s_prev)))


# ---------------------------------------------------------------------------
# sensing slack and linearization


def crb_threshold(config) -> float:
    """RHS 1/(2|beta|^2 Gamma_CRB) of the sensing-power constraint."""
    return 1.0 / (2.0 * abs(config.reflection_coefficient) ** 2 * config.crb_limit)


def sensing_form_min_over_samples(
    sol: BeamSolution, realization, config, samples: ErrorSampleSet
) -> float:
    """min over error samples of sum_n Re(z_n^H Q_n z_n)."""
    best = math.inf
    for idx in range(len(samples)):
        total = 0.0
        for n in range(realization.num_subcarriers):
            Q = sensing_gain_matrix(realization, config, n, samples.samples[idx].dH_be[n])
            total += max(0.0, float(np.real(sol.z_sense[n].conj() @ Q @ sol.z_sense[n])))
        best = min(best, total)
    return best


def chi_update(
    sol: BeamSolution, realization, config, samples: ErrorSampleSet
) -> float:
    """chi_c = max(min_samples sum_n z^H Q z - 1/(2|beta|^2 Gamma), 0)."""
    return max(
        0.0,
        sensing_form_min_over_samples(sol, realization, config, samples)
        - crb_threshold(config),
    )


def crb_quadratic_linearization(
    z_prev: np.ndarray, Q_list: list[np.ndarray]
) -> list[tuple[float, np.ndarray]]:
    """Affine minorant of z^H Q z per subcarrier, tangent at z_prev.

    Returns (const_n, b_n) per subcarrier with bound(z) = 2*Re(b_n^H z) - const_n,
    valid for PSD Q (z^H Q z >= 2 Re(z_prev^H Q z) - z_prev^H Q z_prev).
    """
    out = []
    for n, Q in enumerate(Q_list):
        scale = max(1.0, float(np.abs(Q).max()))
        if np.linalg.eigvalsh(0.5 * (Q + Q.conj().T)).min() < -1e-8 * scale:
            raise ValueError(f"sensing gain matrix {n} is not PSD")
        b = Q @ z_prev[n]
        const = float(np.real(z_prev[n].conj() @ b))
        out.append((const, b))
    return out
