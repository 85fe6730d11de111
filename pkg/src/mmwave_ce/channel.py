"""Frequency-selective multi-user mmWave channel generator.

Each user sees ``L`` paths sharing AoA/AoD across all subcarriers; only the
per-path complex gains vary with frequency. Tap ``d`` is

    H_d = gamma * sum_i g_i * p_rc(d*Ts - tau_i) * a(N_A, theta_i) a(M_A, phi_i)^H

and subcarrier ``k`` is the length-``K`` DFT of the taps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import SystemConfig


def steering_vector(n_antennas: int, angle_sin: float) -> np.ndarray:
    """Unit-norm ULA response with half-wavelength spacing.

    Element ``m`` is ``exp(j*pi*angle_sin*m) / sqrt(n_antennas)``.
    """
    m = np.arange(n_antennas)
    return np.exp(1j * np.pi * angle_sin * m) / np.sqrt(n_antennas)


def steering_matrix(n_antennas: int, angles_sin) -> np.ndarray:
    """Stack steering vectors column-wise, shape ``(n_antennas, len(angles_sin))``."""
    angles = np.atleast_1d(np.asarray(angles_sin, dtype=float))
    m = np.arange(n_antennas)[:, None]
    return np.exp(1j * np.pi * m * angles[None, :]) / np.sqrt(n_antennas)


def raised_cosine(t, sample_interval: float, rolloff: float):
    """Raised-cosine pulse evaluated at time ``t`` (scalar or array).

    The removable singularity at ``|t| = Ts / (2*rolloff)`` takes its limit
    ``(pi/4) * sinc(1/(2*rolloff))``.
    """
    t = np.asarray(t, dtype=float)
    x = t / sample_interval
    out = np.sinc(x)
    if rolloff > 0:
        denom = 1.0 - (2.0 * rolloff * x) ** 2
        singular = np.isclose(denom, 0.0, atol=1e-12)
        safe = np.where(singular, 1.0, denom)
        out = np.where(
            singular,
            (np.pi / 4.0) * np.sinc(1.0 / (2.0 * rolloff)),
            out * np.cos(np.pi * rolloff * x) / safe,
        )
    if out.ndim == 0:
        return float(out)
    return out


def subcarrier_from_taps(taps: Sequence[np.ndarray] | np.ndarray, num_subcarriers: int) -> np.ndarray:
    """Per-subcarrier matrices ``H^k = sum_d taps[d] exp(-j 2 pi k d / K)``.

    Returns an array of shape ``(K, rows, cols)``.
    """
    if len(taps) == 0:
        raise ValueError("at least one tap is required")
    shapes = {np.shape(t) for t in taps}
    if len(shapes) != 1:
        raise ValueError(f"tap matrices have mismatched shapes: {sorted(shapes)}")
    stacked = np.asarray(taps, dtype=complex)
    n_taps = stacked.shape[0]
    if n_taps > num_subcarriers:
        raise ValueError("number of taps exceeds number of subcarriers")
    k = np.arange(num_subcarriers)[:, None]
    d = np.arange(n_taps)[None, :]
    phases = np.exp(-2j * np.pi * k * d / num_subcarriers)
    return np.tensordot(phases, stacked, axes=([1], [0]))


@dataclass(frozen=True)
class ChannelPath:
    gain: complex
    delay: float
    aoa_sin: float
    aod_sin: float


@dataclass(frozen=True)
class ChannelRealization:
    """Ground-truth channel for all users.

    Arrays are indexed ``[user, ...]``:

    * ``aoa``, ``aod``, ``gains``, ``delays``: ``(U, L)``
    * ``tap_gains``: ``(U, D, L)``, the pulse-weighted per-tap path gains
    * ``gain_diagonals``: ``(U, K, L)``
    * ``tap_matrices``: ``(U, D, N_A, M_A)``
    * ``subcarrier_matrices``: ``(U, K, N_A, M_A)``
    """

    aoa: np.ndarray
    aod: np.ndarray
    gains: np.ndarray
    delays: np.ndarray
    tap_gains: np.ndarray
    gain_diagonals: np.ndarray
    tap_matrices: np.ndarray
    subcarrier_matrices: np.ndarray
    gamma: float

    @property
    def num_users(self) -> int:
        return self.aoa.shape[0]

    @property
    def num_paths(self) -> int:
        return self.aoa.shape[1]

    def paths(self, user: int) -> list[ChannelPath]:
        return [
            ChannelPath(complex(self.gains[user, i]), float(self.delays[user, i]),
                        float(self.aoa[user, i]), float(self.aod[user, i]))
            for i in range(self.num_paths)
        ]

    def receive_steering(self, user: int) -> np.ndarray:
        return steering_matrix(self.subcarrier_matrices.shape[2], self.aoa[user])

    def transmit_steering(self, user: int) -> np.ndarray:
        return steering_matrix(self.subcarrier_matrices.shape[3], self.aod[user])


def circular_separation(a: np.ndarray) -> float:
    """Smallest pairwise distance between sine-domain angles on the period-2 circle."""
    a = np.asarray(a, dtype=float)
    if a.size < 2:
        return np.inf
    diff = np.abs(a[:, None] - a[None, :]) % 2.0
    diff = np.minimum(diff, 2.0 - diff)
    diff[np.diag_indices(a.size)] = np.inf
    return float(diff.min())


def _draw_angles(rng: np.random.Generator, n: int, min_separation: float) -> np.ndarray:
    for _ in range(10_000):
        angles = rng.uniform(-1.0, 1.0, n)
        if min_separation <= 0 or circular_separation(angles) > min_separation:
            return angles
    raise RuntimeError(f"could not draw {n} angles with separation > {min_separation}")


def assemble_realization(
    cfg: SystemConfig,
    aoa: np.ndarray,
    aod: np.ndarray,
    gains: np.ndarray,
    delays: np.ndarray,
) -> ChannelRealization:
    """Build tap and subcarrier matrices from explicit path parameters (``(U, L)`` arrays)."""
    aoa = np.asarray(aoa, dtype=float)
    aod = np.asarray(aod, dtype=float)
    gains = np.asarray(gains, dtype=complex)
    delays = np.asarray(delays, dtype=float)
    n_users, n_paths = aoa.shape
    gamma = float(np.sqrt(cfg.num_bs_antennas * cfg.num_user_antennas / n_paths))

    d = np.arange(cfg.num_taps)
    pulse = raised_cosine(d[None, :, None] * cfg.sample_interval - delays[:, None, :],
                          cfg.sample_interval, cfg.pulse_rolloff)
    tap_gains = gains[:, None, :] * pulse  # (U, D, L)

    k = np.arange(cfg.num_subcarriers)
    dft = np.exp(-2j * np.pi * np.outer(k, d) / cfg.num_subcarriers)  # (K, D)
    gain_diagonals = np.einsum("kd,udl->ukl", dft, tap_gains)

    taps = np.empty((n_users, cfg.num_taps, cfg.num_bs_antennas, cfg.num_user_antennas), dtype=complex)
    subcarriers = np.empty((n_users, cfg.num_subcarriers, cfg.num_bs_antennas, cfg.num_user_antennas),
                           dtype=complex)
    for u in range(n_users):
        a_r = steering_matrix(cfg.num_bs_antennas, aoa[u])
        a_t = steering_matrix(cfg.num_user_antennas, aod[u])
        taps[u] = gamma * np.einsum("nl,dl,ml->dnm", a_r, tap_gains[u], a_t.conj())
        subcarriers[u] = subcarrier_from_taps(taps[u], cfg.num_subcarriers)

    return ChannelRealization(
        aoa=aoa, aod=aod, gains=gains, delays=delays, tap_gains=tap_gains,
        gain_diagonals=gain_diagonals, tap_matrices=taps, subcarrier_matrices=subcarriers,
        gamma=gamma,
    )


def generate_realization(
    cfg: SystemConfig,
    rng: np.random.Generator | int | None = None,
    min_separation: float = 0.0,
) -> ChannelRealization:
    """Draw one realization for every user.

    Gains are CN(0, 1), delays uniform on ``[0, delay_spread]``, AoA/AoD
    sines uniform on ``[-1, 1)``. ``min_separation`` (sine domain, circular)
    rejects draws whose AoAs or AoDs for one user are closer than that.
    ``rng`` defaults to ``cfg.rng_seed``.
    """
    if rng is None:
        rng = cfg.rng_seed
    rng = np.random.default_rng(rng)
    U, L = cfg.num_users, cfg.num_paths
    aoa = np.empty((U, L))
    aod = np.empty((U, L))
    gains = np.empty((U, L), dtype=complex)
    delays = np.empty((U, L))
    for u in range(U):
        gains[u] = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2.0)
        delays[u] = rng.uniform(0.0, cfg.delay_spread, L)
        aoa[u] = _draw_angles(rng, L, min_separation)
        aod[u] = _draw_angles(rng, L, min_separation)
    return assemble_realization(cfg, aoa, aod, gains, delays)
