"""Three-stage ESPRIT channel estimator.

AoAs come from the BS-side shift between stage 1 and stage 2, AoDs from the
user-side shift between stage 1 and stage 3 (same routine on conjugate
transposed data). The two unordered sets are then paired through the
structure of a least-squares path-gain matrix, after which per-subcarrier
gains are fitted and the channel rebuilt.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .beam_design import SoundingDesign
from .channel import circular_separation, steering_matrix
from .config import SystemConfig
from .sounding import MeasurementSet

log = logging.getLogger(__name__)

RANK_TOL = 1e-9
COINCIDENT_TOL = 1e-6


def wrap_sin(x):
    """Map sine-domain angles onto ``[-1, 1)``."""
    return (np.asarray(x, dtype=float) + 1.0) % 2.0 - 1.0


def esprit_shift_invariance(r1: np.ndarray, r2: np.ndarray, num_paths: int, *,
                            rank_tol: float = RANK_TOL, full_output: bool = False):
    """Rotation angles between two shifted measurement blocks.

    ``r1`` and ``r2`` (``T_a x T_b``) observe the same paths through arrays
    offset by one element. The dominant ``num_paths``-dimensional subspace of
    ``[r1; r2] [r1; r2]^H`` is split in half and the rotation between the
    halves is solved in the least-squares sense; the eigenvalue phases,
    divided by pi, are the sine-domain angles, returned in ascending order.

    With ``full_output`` a dict of diagnostics is returned as well:
    ``eigenvalues`` of the covariance (descending), ``rotation_eigenvalues``
    and ``rank_deficient`` (L-th eigenvalue below ``rank_tol`` times the first).
    """
    r1 = np.asarray(r1)
    r2 = np.asarray(r2)
    if r1.shape != r2.shape:
        raise ValueError(f"shape mismatch {r1.shape} vs {r2.shape}")
    t_a = r1.shape[0]
    if num_paths > t_a:
        raise ValueError(f"cannot resolve {num_paths} paths from {t_a} rows")
    stacked = np.vstack([r1, r2])
    cov = stacked @ stacked.conj().T
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    signal = evecs[:, order[:num_paths]]
    u1, u2 = signal[:t_a], signal[t_a:]
    psi = np.linalg.lstsq(u1, u2, rcond=None)[0]
    lam = np.linalg.eigvals(psi)
    angles = np.sort(wrap_sin(np.angle(lam) / np.pi))
    if not full_output:
        return angles
    deficient = bool(evals[num_paths - 1] <= rank_tol * max(evals[0], np.finfo(float).tiny))
    if deficient:
        log.warning("signal subspace weaker than rank %d (eigenvalue ratio %.3g)",
                    num_paths, evals[num_paths - 1] / evals[0] if evals[0] > 0 else 0.0)
    return angles, {"eigenvalues": evals, "rotation_eigenvalues": lam, "rank_deficient": deficient}


def estimate_aoa(stage1_k0: np.ndarray, stage2: np.ndarray, num_paths: int, **kw):
    return esprit_shift_invariance(stage1_k0, stage2, num_paths, **kw)


def estimate_aod_tde(stage1_k0: np.ndarray, stage3: np.ndarray, num_paths: int, **kw):
    """AoDs from the user-side shift; roles of rows and columns swap."""
    return esprit_shift_invariance(stage1_k0.conj().T, stage3.conj().T, num_paths, **kw)


def path_gain_matrix(r1: np.ndarray, combiner: np.ndarray, precoder: np.ndarray,
                     aoa: np.ndarray, aod: np.ndarray, gamma: float) -> np.ndarray:
    """LS estimate of the ``L x L`` gain matrix from unpaired angle sets.

    Noise-free it is a permuted diagonal whose nonzero pattern encodes the
    AoA/AoD pairing.
    """
    a_r = steering_matrix(combiner.shape[1], aoa)
    a_t = steering_matrix(precoder.shape[0], aod)
    left = np.linalg.pinv(combiner @ a_r)
    right = np.linalg.pinv(a_t.conj().T @ precoder)
    return left @ r1 @ right / gamma


def pair_angles(aoa: np.ndarray, aod: np.ndarray, gain_matrix: np.ndarray) -> AngleEstimates:
    """Greedy pairing: row ``i`` takes its largest-magnitude remaining column.

    The AoA order is kept and the AoDs are permuted to match it.
    """
    n = len(aoa)
    remaining = list(range(n))
    order = np.empty(n, dtype=int)
    mags = np.abs(gain_matrix)
    for i in range(n):
        best = max(remaining, key=lambda d: mags[i, d])
        order[i] = best
        remaining.remove(best)
    return AngleEstimates(np.asarray(aoa, dtype=float).copy(), np.asarray(aod, dtype=float)[order],
                          paired=True, permutation=order)


def khatri_rao_system(combiner: np.ndarray, precoder: np.ndarray,
                      aoa: np.ndarray, aod: np.ndarray) -> np.ndarray:
    """Columns ``kron(F^T a_T*(phi_i), W a_R(theta_i))``, i.e. ``vec(W a_R a_T^H F)``.

    Shape ``(T3*T1, L)``; the full ``(F^T kron W)`` is never formed.
    """
    w_ar = combiner @ steering_matrix(combiner.shape[1], aoa)          # T3 x L
    ft_at = precoder.T @ steering_matrix(precoder.shape[0], aod).conj()  # T1 x L
    return np.einsum("tl,rl->trl", ft_at, w_ar).reshape(-1, w_ar.shape[1])


def estimate_gains(stage1: np.ndarray, aoa: np.ndarray, aod: np.ndarray, combiner: np.ndarray,
                   precoder: np.ndarray, gamma: float, user: int | None = None) -> np.ndarray:
    """Per-subcarrier LS path gains, shape ``(K, L)``.

    ``stage1`` is ``(K, T3, T1)`` and the angle lists must already be paired.
    """
    system = khatri_rao_system(combiner, precoder, aoa, aod)
    if np.linalg.matrix_rank(system) < system.shape[1]:
        who = "" if user is None else f" for user {user}"
        raise np.linalg.LinAlgError(f"gain LS system is rank deficient{who}")
    K = stage1.shape[0]
    # column-major vec of each T3 x T1 slice
    rhs = stage1.transpose(0, 2, 1).reshape(K, -1).T
    sol = np.linalg.lstsq(system, rhs, rcond=None)[0]
    return sol.T / gamma


def reconstruct(aoa: np.ndarray, aod: np.ndarray, gains: np.ndarray, n_bs: int, n_user: int,
                gamma: float) -> np.ndarray:
    """``H^k = gamma * A_R diag(v^k) A_T^H`` for every row of ``gains`` (``(K, L)``)."""
    a_r = steering_matrix(n_bs, aoa)
    a_t = steering_matrix(n_user, aod)
    return gamma * np.einsum("nl,kl,ml->knm", a_r, np.atleast_2d(gains), a_t.conj())


@dataclass
class AngleEstimates:
    aoa: np.ndarray
    aod: np.ndarray
    paired: bool = False
    permutation: np.ndarray | None = None


@dataclass
class ChannelEstimate:
    """Estimated channel for all users.

    ``aoa``/``aod`` are ``(U, L)`` with matching index = same path,
    ``gains`` is ``(U, K, L)`` and ``channels`` is ``(U, K, N_A, M_A)``.
    ``flags`` lists per-user warnings (``(user, message)`` pairs).
    """

    aoa: np.ndarray
    aod: np.ndarray
    gains: np.ndarray
    channels: np.ndarray
    scheme: str = ""
    flags: list[tuple[int, str]] = field(default_factory=list)


def _separation_flags(user: int, aoa, aod, flags: list) -> None:
    if circular_separation(aoa) < COINCIDENT_TOL or circular_separation(aod) < COINCIDENT_TOL:
        flags.append((user, "coincident angles; accuracy not guaranteed"))


def estimate_tde(meas: MeasurementSet, design: SoundingDesign, cfg: SystemConfig) -> ChannelEstimate:
    """Full three-stage estimate for every user in ``meas``."""
    if meas.stage3 is None:
        raise ValueError("TDE needs the third sounding stage")
    L, gamma = cfg.num_paths, cfg.gamma
    U, K = meas.stage1.shape[:2]
    aoa = np.empty((U, L))
    aod = np.empty((U, L))
    gains = np.empty((U, K, L), dtype=complex)
    channels = np.empty((U, K, cfg.num_bs_antennas, cfg.num_user_antennas), dtype=complex)
    flags: list[tuple[int, str]] = []
    for u in range(U):
        s1, s2, s3 = meas.for_user(u)
        theta, info_r = estimate_aoa(s1[0], s2, L, full_output=True)
        phi, info_t = estimate_aod_tde(s1[0], s3, L, full_output=True)
        if info_r["rank_deficient"] or info_t["rank_deficient"]:
            flags.append((u, "signal subspace rank below path count"))
        lam0 = path_gain_matrix(s1[0], design.w_tail_off, design.f_tail_off, theta, phi, gamma)
        paired = pair_angles(theta, phi, lam0)
        _separation_flags(u, paired.aoa, paired.aod, flags)
        aoa[u], aod[u] = paired.aoa, paired.aod
        gains[u] = estimate_gains(s1, paired.aoa, paired.aod, design.w_tail_off, design.f_tail_off, gamma, u)
        channels[u] = reconstruct(paired.aoa, paired.aod, gains[u], cfg.num_bs_antennas,
                                  cfg.num_user_antennas, gamma)
    return ChannelEstimate(aoa, aod, gains, channels, scheme="TDE", flags=flags)
