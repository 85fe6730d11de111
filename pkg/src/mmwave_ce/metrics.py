"""Estimation-quality metrics."""

from __future__ import annotations

import numpy as np


def nmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Total squared error over all users and subcarriers divided by total channel energy."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: estimate {estimate.shape} vs truth {truth.shape}")
    return float(np.sum(np.abs(estimate - truth) ** 2) / np.sum(np.abs(truth) ** 2))


def link_rate(estimate: np.ndarray, truth: np.ndarray, snr_linear: float, num_streams: int) -> float:
    """Rate of one ``N_A x M_A`` link when beamforming from the estimate.

    The combiner/precoder are the top ``num_streams`` left/right singular
    vectors of ``estimate``; they are applied to ``truth``. Transmit power is
    split equally across streams and the receive noise is white, so the rate
    is ``log2 det(I + snr/num_streams * G G^H)`` with ``G = U^H H V``.
    """
    u, _, vh = np.linalg.svd(estimate)
    g = u[:, :num_streams].conj().T @ truth @ vh[:num_streams].conj().T
    m = np.eye(num_streams) + (snr_linear / num_streams) * (g @ g.conj().T)
    sign, logdet = np.linalg.slogdet(m)
    return float(logdet / np.log(2.0))


def spectral_efficiency(estimate: np.ndarray, truth: np.ndarray, snr_linear: float, num_streams: int) -> float:
    """Sum over users of the subcarrier-averaged link rate, bits/s/Hz.

    ``estimate``/``truth`` have shape ``(U, K, N_A, M_A)``.
    """
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: estimate {estimate.shape} vs truth {truth.shape}")
    total = 0.0
    for u in range(truth.shape[0]):
        rates = [link_rate(estimate[u, k], truth[u, k], snr_linear, num_streams) for k in range(truth.shape[1])]
        total += float(np.mean(rates))
    return total
