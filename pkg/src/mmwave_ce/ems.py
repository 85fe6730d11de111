"""Two-stage estimator: ESPRIT for AoA, per-path minimum search for AoD.

With the user side fully powered, stage 1 and stage 2 give the AoAs exactly
as in the three-stage scheme. Projecting stage 1 onto the estimated receive
steering vectors yields one ``T1`` vector per path, proportional to
``F^H a(M_A, phi_i)``. The AoD is the ``phi`` whose precoded steering vector
has the least energy orthogonal to that path vector: a coarse scan picks the
mainlobe, a derivative-sign bisection narrows it down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .beam_design import SoundingDesign
from .channel import steering_matrix
from .config import SystemConfig
from .sounding import EMS, MeasurementSet
from .tde import (ChannelEstimate, esprit_shift_invariance, estimate_gains, pair_angles,
                  path_gain_matrix, reconstruct, wrap_sin)

DEFAULT_EPSILON = 1e-3
FD_STEP = 1e-7
FLAT_DERIVATIVE = 1e-12


def ls_path_matrix(stage1_k0: np.ndarray, w_reduced: np.ndarray, aoa: np.ndarray, gamma: float) -> np.ndarray:
    """``(1/gamma) * pinv(W~ A_R^1) @ R1``, shape ``(L, T1)``.

    ``A_R^1`` holds the steering vectors restricted to the ``N_A - 1``
    powered antennas. Row ``i`` conjugated is the path vector ``d_i``.
    """
    n_bs = w_reduced.shape[1] + 1
    a_r1 = steering_matrix(n_bs, aoa)[:-1]
    system = w_reduced @ a_r1
    if np.linalg.matrix_rank(system) < system.shape[1]:
        raise np.linalg.LinAlgError("projected receive steering matrix is rank deficient")
    return np.linalg.lstsq(system, stage1_k0, rcond=None)[0] / gamma


def null_basis(vec: np.ndarray, method: str = "svd") -> np.ndarray:
    """Orthonormal basis of the complement of ``vec`` (``T x (T-1)``)."""
    v = np.asarray(vec, dtype=complex).reshape(-1, 1)
    if method == "svd":
        u = np.linalg.svd(v, full_matrices=True)[0]
        return u[:, 1:]
    if method == "qr":
        # different completion: QR of [v, reversed identity]
        t = v.shape[0]
        q = np.linalg.qr(np.hstack([v, np.eye(t)[:, ::-1]]))[0]
        return q[:, 1:t]
    raise ValueError(f"unknown completion method {method!r}")


@dataclass(frozen=True)
class AodObjective:
    """Energy of ``F^H a(phi)`` outside the estimated path direction."""

    path_vector: np.ndarray
    basis: np.ndarray
    precoder: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    @classmethod
    def build(cls, path_vector: np.ndarray, precoder: np.ndarray, epsilon: float = DEFAULT_EPSILON,
              method: str = "svd") -> AodObjective:
        return cls(np.asarray(path_vector), null_basis(path_vector, method), np.asarray(precoder), epsilon)

    @property
    def num_antennas(self) -> int:
        return self.precoder.shape[0]

    def __call__(self, phi):
        return objective(phi, self)


def objective(phi, obj: AodObjective):
    """``||U_i^H F^H a(M_A, phi)||^2`` for scalar or array ``phi``."""
    d = obj.precoder.conj().T @ steering_matrix(obj.num_antennas, phi)
    vals = np.sum(np.abs(obj.basis.conj().T @ d) ** 2, axis=0)
    if np.ndim(phi) == 0:
        return float(vals[0])
    return vals


def ideal_objective(phi, phi_true: float, n_antennas: int):
    """Noise-free, unitary-precoder form ``1 - Dirichlet^2``."""
    x = np.pi * (np.asarray(phi, dtype=float) - phi_true) / 2.0
    num = np.sin(n_antennas * x) ** 2
    den = n_antennas ** 2 * np.sin(x) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        val = 1.0 - num / den
    return np.where(np.isclose(np.sin(x), 0.0, atol=1e-15), 0.0, val)


def coarse_minimum(obj: AodObjective) -> tuple[int, tuple[float, float]]:
    """Best of ``M_A`` samples spaced ``2/M_A`` and the ``4/M_A``-wide interval around it.

    The interval is centred on the winning sample and is not clipped to
    ``[-1, 1)``: the objective has period 2 in ``phi``, so an interval that
    pokes past -1 simply continues from +1.
    """
    m = obj.num_antennas
    if m < 2:
        raise ValueError("coarse search needs at least 2 transmit antennas")
    samples = -1.0 + 2.0 * np.arange(m) / m
    n_s = int(np.argmin(objective(samples, obj))) + 1
    return n_s, (-1.0 + 2.0 * (n_s - 2) / m, -1.0 + 2.0 * n_s / m)


def interval_contains(interval: tuple[float, float], phi: float) -> bool:
    """Membership modulo the period-2 sine-angle wrap."""
    lo, hi = interval
    shifted = lo + (phi - lo) % 2.0
    return shifted <= hi


def _slope(obj: AodObjective, x: float, h: float) -> float:
    return (obj(x + h) - obj(x - h)) / (2.0 * h)


def refine_minimum(obj: AodObjective, interval: tuple[float, float], epsilon: float | None = None,
                   *, fd_step: float = FD_STEP) -> tuple[float, int]:
    """Locate the minimum inside ``interval`` to within ``epsilon``.

    Bisection on the sign of a central-difference slope; if the slope is
    numerically flat the step falls back to a ternary comparison (which
    keeps the middle third when the midpoint beats both probes). Once the
    bracket is no wider than ``2*epsilon`` one secant step on the slope
    (kept inside the bracket) sharpens the answer.

    Returns the estimate wrapped into ``[-1, 1)`` and the number of
    bracket-shrinking iterations, the final secant step included.
    """
    eps = obj.epsilon if epsilon is None else epsilon
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    lo, hi = interval
    if not hi > lo:
        raise ValueError("empty search interval")
    g_lo = g_hi = None
    iterations = 0
    while (hi - lo) / 2.0 > eps:
        mid = 0.5 * (lo + hi)
        g = _slope(obj, mid, fd_step)
        if abs(g) < FLAT_DERIVATIVE:
            third = (hi - lo) / 3.0
            f1, f2, fm = obj(lo + third), obj(hi - third), obj(mid)
            if fm <= f1 and fm <= f2:
                # stationary midpoint: keep the middle third
                lo, hi, g_lo, g_hi = lo + third, hi - third, None, None
            elif f1 <= f2:
                hi, g_hi = hi - third, None
            else:
                lo, g_lo = lo + third, None
        elif g > 0:
            hi, g_hi = mid, g
        else:
            lo, g_lo = mid, g
        iterations += 1

    if g_lo is None:
        g_lo = _slope(obj, lo, fd_step)
    if g_hi is None:
        g_hi = _slope(obj, hi, fd_step)
    if g_lo < 0 < g_hi:
        est = lo - g_lo * (hi - lo) / (g_hi - g_lo)
        est = min(max(est, lo), hi)
    else:
        est = lo if obj(lo) <= obj(hi) else hi
    iterations += 1
    return float(wrap_sin(est)), iterations


def bisection_budget(n_antennas: int, epsilon: float) -> int:
    """Rounded ``log2(4 / (M_A * epsilon))``."""
    return int(math.floor(math.log2(4.0 / (n_antennas * epsilon)) + 0.5))


def estimate_aod_ems(stage1_k0: np.ndarray, design: SoundingDesign, aoa: np.ndarray, gamma: float,
                     epsilon: float = DEFAULT_EPSILON) -> tuple[np.ndarray, list[dict]]:
    """One AoD per estimated AoA, index-aligned with ``aoa``."""
    d_t = ls_path_matrix(stage1_k0, design.w_reduced, aoa, gamma)
    aod = np.empty(len(aoa))
    details = []
    for i in range(len(aoa)):
        obj = AodObjective.build(d_t[i].conj(), design.precoder, epsilon)
        n_s, interval = coarse_minimum(obj)
        aod[i], iters = refine_minimum(obj, interval)
        details.append({"sector": n_s, "interval": interval, "iterations": iters})
    return aod, details


def estimate_ems(meas: MeasurementSet, design: SoundingDesign, cfg: SystemConfig,
                 epsilon: float = DEFAULT_EPSILON, repair_pairing: bool = False) -> ChannelEstimate:
    """Two-stage estimate for every user.

    AoD ``i`` is searched from path vector ``i`` and so inherits AoA ``i``'s
    index. ``repair_pairing`` additionally runs the greedy gain-matrix
    pairing and adopts its permutation.
    """
    if meas.mode != EMS:
        raise ValueError("EMS needs measurements taken with every user antenna on")
    L, gamma = cfg.num_paths, cfg.gamma
    U, K = meas.stage1.shape[:2]
    aoa = np.empty((U, L))
    aod = np.empty((U, L))
    gains = np.empty((U, K, L), dtype=complex)
    channels = np.empty((U, K, cfg.num_bs_antennas, cfg.num_user_antennas), dtype=complex)
    flags: list[tuple[int, str]] = []
    mainlobe = 4.0 / cfg.num_user_antennas
    for u in range(U):
        s1, s2, _ = meas.for_user(u)
        theta, info = esprit_shift_invariance(s1[0], s2, L, full_output=True)
        if info["rank_deficient"]:
            flags.append((u, "signal subspace rank below path count"))
        phi, _ = estimate_aod_ems(s1[0], design, theta, gamma, epsilon)
        if repair_pairing:
            lam0 = path_gain_matrix(s1[0], design.w_tail_off, design.precoder, theta, phi, gamma)
            paired = pair_angles(theta, phi, lam0)
            if not np.array_equal(paired.permutation, np.arange(L)):
                flags.append((u, "gain-matrix pairing reordered AoDs"))
            phi = paired.aod
        sep = np.abs(phi[:, None] - phi[None, :]) % 2.0
        sep = np.minimum(sep, 2.0 - sep) + np.eye(L) * 10
        if L > 1 and sep.min() < mainlobe:
            flags.append((u, "AoDs share a mainlobe; accuracy not guaranteed"))
        aoa[u], aod[u] = theta, phi
        gains[u] = estimate_gains(s1, theta, phi, design.w_tail_off, design.precoder, gamma, u)
        channels[u] = reconstruct(theta, phi, gains[u], cfg.num_bs_antennas, cfg.num_user_antennas, gamma)
    return ChannelEstimate(aoa, aod, gains, channels, scheme="EMS", flags=flags)
