"""Boundary-sample sets approximating the norm-ball CSI uncertainty regions.

Robust constraints over the continuous error balls are instantiated at the
nominal channel plus a fixed set of boundary samples; worst cases of
norm-bounded perturbations lie on the ball boundary.  The first boundary
sample is deterministic and aligned with the estimated channel (for the
Eve->user ball this is the exact worst case of the jamming power).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ChannelRealization, sample_csi_error

SAMPLE_SEED_OFFSET = 0x5A11E


@dataclass
class ErrorSample:
    dH_be: np.ndarray   # (N, V, M)
    dh_eu: np.ndarray   # (N, K, M)


@dataclass
class ErrorSampleSet:
    """Nominal (index 0) plus boundary error samples, fixed for a whole run."""

    samples: list[ErrorSample]

    def __len__(self) -> int:
        return len(self.samples)

    def H_be(self, realization: ChannelRealization, idx: int, n: int) -> np.ndarray:
        return realization.H_be_hat[n] + self.samples[idx].dH_be[n]

    def h_eu(self, realization: ChannelRealization, idx: int, n: int, k: int) -> np.ndarray:
        return realization.h_eu_hat[n, k] + self.samples[idx].dh_eu[n, k]


def _aligned_sample(realization: ChannelRealization) -> ErrorSample:
    """Boundary sample aligned with the channel estimate (norm-increasing)."""
    N, K, M = realization.h_eu_hat.shape
    V = realization.H_be_hat.shape[1]
    dH = np.zeros((N, V, M), dtype=complex)
    dh = np.zeros((N, K, M), dtype=complex)
    for n in range(N):
        nb = np.linalg.norm(realization.H_be_hat[n])
        if nb > 0:
            dH[n] = realization.eps_be[n] * realization.H_be_hat[n] / nb
        for k in range(K):
            nk = np.linalg.norm(realization.h_eu_hat[n, k])
            if nk > 0:
                dh[n, k] = realization.eps_eu[n, k] * realization.h_eu_hat[n, k] / nk
    return ErrorSample(dH_be=dH, dh_eu=dh)


def build_error_samples(
    realization: ChannelRealization, config, seed: int
) -> ErrorSampleSet:
    """Nominal + S boundary samples (S = config.robust_sample_count)."""
    N, K, M = realization.h_eu_hat.shape
    V = realization.H_be_hat.shape[1]
    samples = [
        ErrorSample(
            dH_be=np.zeros((N, V, M), dtype=complex),
            dh_eu=np.zeros((N, K, M), dtype=complex),
        )
    ]
    S = config.robust_sample_count
    if S >= 1:
        samples.append(_aligned_sample(realization))
    rng = np.random.default_rng(seed + SAMPLE_SEED_OFFSET)
    for _ in range(S - 1):
        dH = np.empty((N, V, M), dtype=complex)
        dh = np.empty((N, K, M), dtype=complex)
        for n in range(N):
            dH[n] = sample_csi_error(realization.eps_be[n], V, M, True, rng)
            for k in range(K):
                dh[n, k] = sample_csi_error(
                    realization.eps_eu[n, k], M, 1, True, rng
                )[:, 0]
        samples.append(ErrorSample(dH_be=dH, dh_eu=dh))
    return ErrorSampleSet(samples=samples)


def fresh_error_samples(
    realization: ChannelRealization, config, count: int, seed: int
) -> ErrorSampleSet:
    """Independent audit samples: aligned + alternating interior/boundary draws."""
    N, K, M = realization.h_eu_hat.shape
    V = realization.H_be_hat.shape[1]
    rng = np.random.default_rng(seed)
    samples = [_aligned_sample(realization)]
    for i in range(count - 1):
        boundary = i % 2 == 0
        dH = np.empty((N, V, M), dtype=complex)
        dh = np.empty((N, K, M), dtype=complex)
        for n in range(N):
            dH[n] = sample_csi_error(realization.eps_be[n], V, M, boundary, rng)
            for k in range(K):
                dh[n, k] = sample_csi_error(
                    realization.eps_eu[n, k], M, 1, boundary, rng
                )[:, 0]
        samples.append(ErrorSample(dH_be=dH, dh_eu=dh))
    return ErrorSampleSet(samples=samples)
