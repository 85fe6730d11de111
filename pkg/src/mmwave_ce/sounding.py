"""Staged pilot transmission and stacked measurement matrices.

For user ``u`` and subcarrier ``k`` one stage yields

    R = W_stage @ H_u^k @ F_stage + N~      (T3 x T1)

where each block of ``N_R`` combiner rows sees its own noise draw, exactly as
when the ``T2`` combiners are applied in separate time slots.

Stage masks (which antenna is powered off):

=========  ==========  =====================  ===========
stage      BS side     user side (TDE mode)   subcarriers
=========  ==========  =====================  ===========
STAGE1     last off    last off               all K
STAGE2     first off   last off               k = 0
STAGE3     last off    first off              k = 0
=========  ==========  =====================  ===========

In EMS mode the user keeps every antenna on and only STAGE1/STAGE2 exist.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .beam_design import SoundingDesign
from .channel import ChannelRealization

TDE = "tde"
EMS = "ems"
MODES = (TDE, EMS)


class StageId(enum.Enum):
    STAGE1 = 1
    STAGE2 = 2
    STAGE3 = 3

    def matrices(self, design: SoundingDesign, mode: str = TDE) -> tuple[np.ndarray, np.ndarray]:
        """Combiner and precoder applied during this stage."""
        if mode not in MODES:
            raise ValueError(f"unknown sounding mode {mode!r}")
        if mode == EMS:
            if self is StageId.STAGE3:
                raise ValueError("EMS sounding has no third stage")
            f = design.precoder
        else:
            f = design.f_head_off if self is StageId.STAGE3 else design.f_tail_off
        w = design.w_head_off if self is StageId.STAGE2 else design.w_tail_off
        return w, f


def block_noise(combiner: np.ndarray, num_bs_rf: int, n_columns: int, noise_variance: float,
                rng: np.random.Generator) -> np.ndarray:
    """Post-combining noise, independent raw noise per ``num_bs_rf``-row block and column."""
    t3, n_ant = combiner.shape
    t2 = t3 // num_bs_rf
    raw = (rng.standard_normal((t2, n_ant, n_columns))
           + 1j * rng.standard_normal((t2, n_ant, n_columns))) * np.sqrt(noise_variance / 2.0)
    blocks = combiner.reshape(t2, num_bs_rf, n_ant)
    return np.einsum("brn,bnt->brt", blocks, raw).reshape(t3, n_columns)


def simulate_stage(design: SoundingDesign, realization: ChannelRealization, stage: StageId,
                   subcarriers, noise_variance: float, rng: np.random.Generator,
                   mode: str = TDE) -> np.ndarray:
    """Received matrices for every user on the requested subcarriers.

    Returns shape ``(U, len(subcarriers), T3, T1)``.
    """
    w, f = stage.matrices(design, mode)
    ks = list(subcarriers)
    H = realization.subcarrier_matrices[:, ks]
    clean = np.einsum("tn,uknm,ms->ukts", w, H, f)
    if noise_variance > 0:
        for u in range(clean.shape[0]):
            for j in range(len(ks)):
                clean[u, j] += block_noise(w, design.num_bs_rf, f.shape[1], noise_variance, rng)
    return clean


@dataclass(frozen=True)
class MeasurementSet:
    """Despread per-user measurements.

    ``stage1`` has shape ``(U, K, T3, T1)``; ``stage2``/``stage3`` are the
    ``k = 0`` matrices with shape ``(U, T3, T1)``. ``stage3`` is ``None`` in
    EMS mode.
    """

    mode: str
    stage1: np.ndarray
    stage2: np.ndarray
    stage3: np.ndarray | None
    noise_variance: float
    snr_db: float | None = None
    rng_seed: int | None = None

    @property
    def num_users(self) -> int:
        return self.stage1.shape[0]

    def for_user(self, u: int) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        s3 = None if self.stage3 is None else self.stage3[u]
        return self.stage1[u], self.stage2[u], s3


def signal_power(design: SoundingDesign, realization: ChannelRealization) -> float:
    """Mean ``||W H_u^k F||_F^2`` over users and subcarriers (unmasked matrices)."""
    H = realization.subcarrier_matrices
    y = np.einsum("tn,uknm,ms->ukts", design.combiner, H, design.precoder)
    return float(np.mean(np.sum(np.abs(y) ** 2, axis=(2, 3))))


def noise_variance_for_snr(design: SoundingDesign, realization: ChannelRealization, snr_db: float) -> float:
    """Raw per-antenna noise variance giving the requested measurement SNR.

    SNR is ``E||W H F||^2 / E||N~||^2`` with ``E||N~||^2 = T1 * sigma^2 * ||W||_F^2``,
    the signal term averaged over the users and subcarriers of ``realization``.
    """
    noise_energy = design.t1 * np.linalg.norm(design.combiner) ** 2
    return signal_power(design, realization) / (10.0 ** (snr_db / 10.0) * noise_energy)


def simulate_measurements(design: SoundingDesign, realization: ChannelRealization, mode: str,
                          noise_variance: float, rng: np.random.Generator | int | None = None,
                          snr_db: float | None = None, rng_seed: int | None = None) -> MeasurementSet:
    """Run every pilot stage of ``mode`` ('tde' or 'ems')."""
    if mode not in MODES:
        raise ValueError(f"unknown sounding mode {mode!r}")
    rng = np.random.default_rng(rng)
    K = realization.subcarrier_matrices.shape[1]
    s1 = simulate_stage(design, realization, StageId.STAGE1, range(K), noise_variance, rng, mode)
    s2 = simulate_stage(design, realization, StageId.STAGE2, [0], noise_variance, rng, mode)[:, 0]
    s3 = None
    if mode == TDE:
        s3 = simulate_stage(design, realization, StageId.STAGE3, [0], noise_variance, rng, mode)[:, 0]
    return MeasurementSet(mode, s1, s2, s3, noise_variance, snr_db, rng_seed)


def pilot_slots(mode: str, num_subcarriers: int, num_users: int, t1: int, t2: int) -> int:
    """Training slots consumed: one stage on all K subcarriers plus one k=0 stage per extra stage."""
    extra = {TDE: 2, EMS: 1}[mode]
    return (num_subcarriers + extra) * num_users * t1 * t2


# Multi-user pilot protocol, used to check that despreading isolates users.

def dft_pilots(num_users: int) -> np.ndarray:
    """Unitary DFT pilot set; column ``u`` is user ``u``'s sequence."""
    n = np.arange(num_users)
    return np.exp(-2j * np.pi * np.outer(n, n) / num_users) / np.sqrt(num_users)


def received_pilot_matrix(combiner_block: np.ndarray, channels: np.ndarray, precoder_columns: np.ndarray,
                          pilots: np.ndarray, noise_variance: float,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """One slot's ``N_R x U`` received pilot matrix.

    ``channels`` is ``(U, N_A, M_A)``, ``precoder_columns`` is ``(U, M_A)`` with
    each user's effective precoding vector, ``pilots`` is ``U x U`` with one
    sequence per column.
    """
    y = np.zeros((combiner_block.shape[0], pilots.shape[0]), dtype=complex)
    for u in range(channels.shape[0]):
        y += np.outer(combiner_block @ channels[u] @ precoder_columns[u], pilots[:, u].conj())
    if noise_variance > 0:
        if rng is None:
            raise ValueError("rng required when noise_variance > 0")
        n = (rng.standard_normal((combiner_block.shape[1], pilots.shape[0]))
             + 1j * rng.standard_normal((combiner_block.shape[1], pilots.shape[0]))) * np.sqrt(noise_variance / 2)
        y += combiner_block @ n
    return y


def despread(received: np.ndarray, pilot: np.ndarray) -> np.ndarray:
    """Isolate one user's measurement vector, ``Y @ p``."""
    pilot = np.asarray(pilot)
    if not np.isclose(np.linalg.norm(pilot), 1.0, atol=1e-10):
        raise ValueError("pilot sequence must have unit norm")
    return received @ pilot


def simulate_stage_multiuser(design: SoundingDesign, realization: ChannelRealization, stage: StageId,
                             subcarrier: int, noise_variance: float, rng: np.random.Generator | None = None,
                             mode: str = TDE, pilots: np.ndarray | None = None) -> np.ndarray:
    """Slot-by-slot version of one stage: transmit, then despread each user.

    Returns ``(U, T3, T1)``; noise-free it equals :func:`simulate_stage`.
    """
    w, f = stage.matrices(design, mode)
    H = realization.subcarrier_matrices[:, subcarrier]
    U = H.shape[0]
    if pilots is None:
        pilots = dft_pilots(U)
    nr = design.num_bs_rf
    t2 = w.shape[0] // nr
    out = np.empty((U, w.shape[0], f.shape[1]), dtype=complex)
    for b in range(t2):
        block = w[b * nr:(b + 1) * nr]
        for t in range(f.shape[1]):
            cols = np.repeat(f[:, t][None, :], U, axis=0)
            y = received_pilot_matrix(block, H, cols, pilots, noise_variance, rng)
            for u in range(U):
                out[u, b * nr:(b + 1) * nr, t] = despread(y, pilots[:, u])
    return out
