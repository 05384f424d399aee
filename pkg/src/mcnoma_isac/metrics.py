"""Physical-layer evaluation: SIC order, SINRs, rates, leakage, CRB, beampatterns.

Everything here is a stateless pure function of a solution and a channel
realization; these are the quantities the optimizer is audited against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import ChannelRealization, steering_vector

LN2 = math.log(2.0)


def _quad(h: np.ndarray, A: np.ndarray) -> float:
    """Re(h^H A h) for Hermitian A (= Tr(h h^H A))."""
    return float(np.real(h.conj() @ A @ h))


def _gram_trace(H: np.ndarray, A: np.ndarray) -> float:
    """Re Tr(H H^H A) for a V x M channel H and Hermitian A."""
    return float(np.real(np.einsum("im,ij,jm->", H.conj(), A, H)))


@dataclass
class BeamSolution:
    """Scheduling + lifted beamforming matrices (+ recovered rank-one vectors)."""

    s: np.ndarray          # (N, K) in [0, 1]
    W: np.ndarray          # (N, K, V, V) Hermitian PSD
    Wbar: np.ndarray       # (N, K, V, V) Hermitian PSD, Big-M product s*W
    V_an: np.ndarray       # (N, V, V) Hermitian PSD AN covariance
    z_sense: np.ndarray    # (N, V) complex sensing auxiliary
    w_rec: np.ndarray | None = None   # (N, K, V) recovered beamformers
    v_rec: np.ndarray | None = None   # (N, V) recovered AN beamformer

    @staticmethod
    def zeros(N: int, K: int, V: int) -> "BeamSolution":
        return BeamSolution(
            s=np.zeros((N, K)),
            W=np.zeros((N, K, V, V), dtype=complex),
            Wbar=np.zeros((N, K, V, V), dtype=complex),
            V_an=np.zeros((N, V, V), dtype=complex),
            z_sense=np.zeros((N, V), dtype=complex),
        )

    def copy(self) -> "BeamSolution":
        return BeamSolution(
            s=self.s.copy(),
            W=self.W.copy(),
            Wbar=self.Wbar.copy(),
            V_an=self.V_an.copy(),
            z_sense=self.z_sense.copy(),
            w_rec=None if self.w_rec is None else self.w_rec.copy(),
            v_rec=None if self.v_rec is None else self.v_rec.copy(),
        )

    def scaled_info(self, scale: float) -> "BeamSolution":
        """Copy with the information covariances scaled by `scale`."""
        out = self.copy()
        out.W = scale * out.W
        out.Wbar = scale * out.Wbar
        return out

    def total_power(self) -> float:
        """Sum of Tr(Wbar_{n,k}) + Tr(V_n) over all subcarriers."""
        return float(
            np.real(np.trace(self.Wbar, axis1=2, axis2=3).sum())
            + np.real(np.trace(self.V_an, axis1=1, axis2=2).sum())
        )

    def validate(self, herm_tol: float = 1e-10, eig_tol: float = -1e-8) -> None:
        for name, blocks in (("W", self.W.reshape(-1, *self.W.shape[-2:])),
                             ("Wbar", self.Wbar.reshape(-1, *self.Wbar.shape[-2:])),
                             ("V_an", self.V_an)):
            for A in blocks:
                if np.max(np.abs(A - A.conj().T)) > herm_tol * max(1.0, np.abs(A).max()):
                    raise ValueError(f"{name} block not Hermitian")
                if np.abs(A).max() > 0 and np.linalg.eigvalsh(A).min() < eig_tol * max(
                    1.0, np.abs(A).max()
                ):
                    raise ValueError(f"{name} block not PSD")


def sic_order(realization: ChannelRealization, n: int) -> list[int]:
    """Users sorted by channel gain, strongest first; ties broken by index."""
    norms = np.linalg.norm(realization.h_user[n], axis=1) ** 2
    return sorted(range(len(norms)), key=lambda k: (-norms[k], k))


def stronger_users(realization: ChannelRealization, n: int, k: int) -> list[int]:
    """Indices j with strictly larger channel gain than user k on subcarrier n."""
    norms = np.linalg.norm(realization.h_user[n], axis=1) ** 2
    return [j for j in range(len(norms)) if norms[j] > norms[k]]


def jamming_power(h_eu: np.ndarray, P_E: float) -> float:
    """Expected jamming power E|h^H x_E|^2 = P_E * ||h_eu||^2."""
    if P_E < 0:
        raise ValueError("P_E must be >= 0")
    return float(P_E * np.linalg.norm(h_eu) ** 2)


def mui_power(
    sol: BeamSolution, realization: ChannelRealization, n: int, k: int
) -> float:
    """Residual multi-user interference at user k from strictly stronger users."""
    h = realization.h_user[n, k]
    return sum(_quad(h, sol.Wbar[n, j]) for j in stronger_users(realization, n, k))


def user_sinr(
    sol: BeamSolution,
    realization: ChannelRealization,
    config,
    n: int,
    k: int,
    eve_error: np.ndarray | None = None,
) -> float:
    """Downlink SINR of user k on subcarrier n (trace form over Wbar)."""
    h = realization.h_user[n, k]
    h_eu = realization.h_eu_hat[n, k]
    if eve_error is not None:
        h_eu = h_eu + eve_error
    num = _quad(h, sol.Wbar[n, k])
    den = (
        mui_power(sol, realization, n, k)
        + jamming_power(h_eu, config.eve_power)
        + _quad(h, sol.V_an[n])
        + config.noise_user
    )
    out = num / den
    if not math.isfinite(out):
        raise ValueError("non-finite SINR")
    return out


def user_rate(
    sol: BeamSolution,
    realization: ChannelRealization,
    config,
    k: int,
    eve_errors: np.ndarray | None = None,
) -> float:
    """R_k = sum_n log2(1 + SINR_{n,k}); eve_errors has shape (N, K, M)."""
    return sum(
        math.log2(
            1.0
            + user_sinr(
                sol,
                realization,
                config,
                n,
                k,
                None if eve_errors is None else eve_errors[n, k],
            )
        )
        for n in range(realization.num_subcarriers)
    )


def min_user_rate(
    sol: BeamSolution,
    realization: ChannelRealization,
    config,
    eve_errors: np.ndarray | None = None,
) -> float:
    return min(
        user_rate(sol, realization, config, k, eve_errors)
        for k in range(realization.num_users)
    )


def leakage_sinr(
    sol: BeamSolution,
    realization: ChannelRealization,
    config,
    n: int,
    k: int,
    be_error: np.ndarray | None = None,
) -> float:
    """Eavesdropper SINR on user k's stream (perfect SIC at the Eve, no MUI)."""
    H = realization.H_be_hat[n]
    if be_error is not None:
        H = H + be_error
    num = _gram_trace(H, sol.Wbar[n, k])
    den = _gram_trace(H, sol.V_an[n]) + config.noise_eve
    return num / den


def leakage_rate(
    sol: BeamSolution,
    realization: ChannelRealization,
    config,
    k: int,
    be_errors: np.ndarray | None = None,
) -> float:
    """R^E_k = sum_n log2(1 + leakage SINR); be_errors has shape (N, V, M)."""
    return sum(
        math.log2(
            1.0
            + leakage_sinr(
                sol,
                realization,
                config,
                n,
                k,
                None if be_errors is None else be_errors[n],
            )
        )
        for n in range(realization.num_subcarriers)
    )


def interference_covariance(
    H_be: np.ndarray, P_E: float, sigma_r2: float
) -> np.ndarray:
    """Radar interference-plus-noise covariance P_E*H*H^H + sigma_r^2*I."""
    if P_E < 0 or sigma_r2 < 0:
        raise ValueError("powers must be >= 0")
    V = H_be.shape[0]
    return P_E * (H_be @ H_be.conj().T) + sigma_r2 * np.eye(V)


def sensing_gain_matrix(
    realization: ChannelRealization, config, n: int, be_error: np.ndarray | None = None
) -> np.ndarray:
    """Q_n = Hdot^H R_n^{-1} Hdot with Hdot = hdot h^H + h hdot^H (Hermitian PSD)."""
    h = realization.h_bt[n]
    hd = realization.h_bt_dot[n]
    Hdot = np.outer(hd, h.conj()) + np.outer(h, hd.conj())
    H_be = realization.H_be_hat[n]
    if be_error is not None:
        H_be = H_be + be_error
    R = interference_covariance(H_be, config.eve_power, config.noise_radar)
    Q = Hdot.conj().T @ np.linalg.solve(R, Hdot)
    return 0.5 * (Q + Q.conj().T)


def sensing_quadratic_forms(
    signals: np.ndarray,
    realization: ChannelRealization,
    config,
    be_errors: np.ndarray | None = None,
) -> np.ndarray:
    """Per-subcarrier forms Re(x_n^H Q_n x_n) for signals of shape (N, V)."""
    N = realization.num_subcarriers
    out = np.empty(N)
    for n in range(N):
        Q = sensing_gain_matrix(
            realization, config, n, None if be_errors is None else be_errors[n]
        )
        out[n] = max(0.0, float(np.real(signals[n].conj() @ Q @ signals[n])))
    return out


def crb_theta(
    signals: np.ndarray,
    realization: ChannelRealization,
    config,
    be_errors: np.ndarray | None = None,
) -> float:
    """Angle-estimation CRB sum_n (2|beta|^2 * x_n^H Q_n x_n)^{-1}, rad^2.

    Returns +inf when any per-subcarrier quadratic form vanishes (the target
    is unobservable in that signal direction).
    """
    beta2 = abs(config.reflection_coefficient) ** 2
    forms = sensing_quadratic_forms(np.asarray(signals), realization, config, be_errors)
    if np.any(forms <= 0.0):
        return math.inf
    return float(np.sum(1.0 / (2.0 * beta2 * forms)))


def beampattern(sol: BeamSolution, theta_grid) -> np.ndarray:
    """Normalized info/AN amplitudes versus angle.

    Returns an array of rows (theta, info_amplitude, an_amplitude) where the
    amplitudes are jointly normalized by the maximum of the pair.
    """
    W_sum = sol.Wbar.sum(axis=(0, 1))
    V_sum = sol.V_an.sum(axis=0)
    V = W_sum.shape[0]
    rows = []
    for theta in theta_grid:
        a = steering_vector(theta, V)
        rows.append((theta, math.sqrt(max(0.0, _quad(a, W_sum))),
                     math.sqrt(max(0.0, _quad(a, V_sum)))))
    table = np.array(rows)
    peak = table[:, 1:].max()
    if peak > 0:
        table[:, 1:] /= peak
    return table
