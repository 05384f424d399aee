"""Channel synthesis: geometry, array responses, fading draws, CSI error sets.

All randomness is owned here and is a pure function of (config, seed).
Array: half-wavelength ULA, angles measured from broadside, so element v of
the response at angle theta carries phase pi*v*sin(theta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def steering_vector(theta: float, num_antennas: int) -> np.ndarray:
    """Unit-modulus ULA response; first element is 1."""
    if num_antennas < 1:
        raise ValueError("num_antennas must be >= 1")
    v = np.arange(num_antennas)
    return np.exp(1j * np.pi * v * np.sin(theta))


def steering_vector_derivative(theta: float, num_antennas: int) -> np.ndarray:
    """d/dtheta of steering_vector: element v is j*pi*v*cos(theta)*e^{j pi v sin(theta)}."""
    if num_antennas < 1:
        raise ValueError("num_antennas must be >= 1")
    v = np.arange(num_antennas)
    return 1j * np.pi * v * np.cos(theta) * np.exp(1j * np.pi * v * np.sin(theta))


def path_loss(distance_km: float) -> float:
    """Linear power gain of the -128.1 - 37.6*log10(d[km]) dB large-scale model."""
    if distance_km <= 0:
        raise ValueError("distance must be positive")
    return 10.0 ** ((-128.1 - 37.6 * math.log10(distance_km)) / 10.0)


def _cn(rng: np.random.Generator, *shape) -> np.ndarray:
    """i.i.d. circularly-symmetric complex Gaussian entries, unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def sample_csi_error(
    bound: float,
    rows: int,
    cols: int,
    on_boundary: bool,
    rng: np.random.Generator,
) -> np.ndarray:
    """Random error matrix with Frobenius norm <= bound (= bound if on_boundary).

    Direction is uniform on the sphere; interior samples are uniform in the
    Frobenius-norm ball.
    """
    if bound < 0:
        raise ValueError("bound must be >= 0")
    if bound == 0:
        return np.zeros((rows, cols), dtype=complex)
    g = _cn(rng, rows, cols)
    direction = g / np.linalg.norm(g)
    if on_boundary:
        return bound * direction
    # uniform radius in a ball of real dimension 2*rows*cols
    u = rng.uniform()
    return bound * u ** (1.0 / (2 * rows * cols)) * direction


@dataclass
class ChannelRealization:
    """One draw of every channel in the system plus the generating geometry."""

    h_user: np.ndarray      # (N, K, V) BS -> user
    H_be_hat: np.ndarray    # (N, V, M) estimated BS -> Eve
    eps_be: np.ndarray      # (N,) Frobenius error bound on H_be
    h_eu_hat: np.ndarray    # (N, K, M) estimated Eve -> user
    eps_eu: np.ndarray      # (N, K) 2-norm error bound on h_eu
    h_bt: np.ndarray        # (N, V) BS -> target
    h_bt_dot: np.ndarray    # (N, V) derivative of h_bt w.r.t. target angle
    theta_target: float
    user_angles: np.ndarray
    user_distances_m: np.ndarray
    target_distance_m: float
    eve_angle: float
    eve_distance_m: float

    @property
    def num_subcarriers(self) -> int:
        return self.h_user.shape[0]

    @property
    def num_users(self) -> int:
        return self.h_user.shape[1]

    @property
    def bs_antennas(self) -> int:
        return self.h_user.shape[2]

    def validate(self) -> None:
        for arr in (self.h_user, self.H_be_hat, self.h_eu_hat, self.h_bt, self.h_bt_dot):
            if not np.all(np.isfinite(arr.view(float))):
                raise ValueError("non-finite channel entries")
        if np.any(self.eps_be < 0) or np.any(self.eps_eu < 0):
            raise ValueError("negative CSI error bounds")


def build_scenario(config, seed: int) -> ChannelRealization:
    """Draw one full channel realization, deterministic in (config, seed)."""
    rng = np.random.default_rng(seed)
    N, K = config.num_subcarriers, config.num_users
    V, M = config.bs_antennas, config.eve_antennas
    g = config.geometry

    theta_t = rng.uniform(*g.target_angle_range)
    target_dist = rng.uniform(*g.target_distance_range_m)
    eve_angle = rng.uniform(*g.eve_angle_range)
    eve_dist = rng.uniform(*g.eve_distance_range_m)

    # Users are dropped outside the Eve's immediate neighborhood: a nearby
    # jammer drives the SINR to zero and an angle-aligned user cannot beat
    # its leakage cap, so such drops make every scheme trivially infeasible.
    bs_frame = lambda ang, d: d * np.array([math.cos(ang), math.sin(ang)])
    pos_eve = bs_frame(eve_angle, eve_dist)
    user_angles = np.empty(K)
    user_dist = np.empty(K)
    for k in range(K):
        for _ in range(1000):
            ang = rng.uniform(*g.user_angle_range)
            dist = rng.uniform(*g.user_distance_range_m)
            if abs(ang - eve_angle) < g.eve_angle_guard:
                continue
            if np.linalg.norm(bs_frame(ang, dist) - pos_eve) < g.eve_separation_min_m:
                continue
            user_angles[k], user_dist[k] = ang, dist
            break
        else:
            raise RuntimeError("could not place user away from the Eve")

    pl_user = np.array([path_loss(d / 1000.0) for d in user_dist])
    pl_eve = path_loss(eve_dist / 1000.0)
    pl_target = path_loss(target_dist / 1000.0)

    # BS -> user: Rayleigh small-scale, unit variance per entry
    h_user = np.sqrt(pl_user)[None, :, None] * _cn(rng, N, K, V)

    # BS -> Eve: Rician around the LoS ray at the Eve's direction.  A nonzero
    # LoS factor keeps the AN/information beampatterns angle-meaningful.
    kappa = config.eve_los_kappa
    a_bs = steering_vector(eve_angle, V)
    phi_e = rng.uniform(-np.pi / 2, np.pi / 2)
    a_ev = steering_vector(phi_e, M)
    los = np.outer(a_bs, a_ev.conj())
    H_be_hat = np.empty((N, V, M), dtype=complex)
    for n in range(N):
        scatter = _cn(rng, V, M)
        H_be_hat[n] = math.sqrt(pl_eve) * (
            math.sqrt(kappa / (1.0 + kappa)) * los
            + math.sqrt(1.0 / (1.0 + kappa)) * scatter
        )

    # Eve -> user: Rayleigh with path loss of the Eve-user separation.
    d_eu = np.array(
        [np.linalg.norm(bs_frame(user_angles[k], user_dist[k]) - pos_eve) for k in range(K)]
    )
    pl_eu = np.array([path_loss(max(d, 1.0) / 1000.0) for d in d_eu])
    h_eu_hat = np.sqrt(pl_eu)[None, :, None] * _cn(rng, N, K, M)

    # BS -> target: line of sight, so the angle derivative is well defined.
    h_bt = np.tile(math.sqrt(pl_target) * steering_vector(theta_t, V), (N, 1))
    h_bt_dot = np.tile(
        math.sqrt(pl_target) * steering_vector_derivative(theta_t, V), (N, 1)
    )

    chi = config.csi_error_fraction
    eps_be = chi * np.linalg.norm(H_be_hat, axis=(1, 2))
    eps_eu = chi * np.linalg.norm(h_eu_hat, axis=2)

    real = ChannelRealization(
        h_user=h_user,
        H_be_hat=H_be_hat,
        eps_be=eps_be,
        h_eu_hat=h_eu_hat,
        eps_eu=eps_eu,
        h_bt=h_bt,
        h_bt_dot=h_bt_dot,
        theta_target=theta_t,
        user_angles=user_angles,
        user_distances_m=user_dist,
        target_distance_m=target_dist,
        eve_angle=eve_angle,
        eve_distance_m=eve_dist,
    )
    real.validate()
    return real
