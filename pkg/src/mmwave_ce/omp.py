"""On-grid orthogonal matching pursuit baseline.

Runs on the same stage-1 measurements as the two-stage scheme: atoms are the
precoded/combined steering pairs on uniform AoA and AoD grids, selected
greedily on subcarrier 0 and then refitted per subcarrier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beam_design import SoundingDesign
from .channel import steering_matrix
from .config import SystemConfig
from .sounding import MeasurementSet
from .tde import ChannelEstimate, estimate_gains, khatri_rao_system, reconstruct

DEFAULT_GRID = 90


def uniform_grid(size: int) -> np.ndarray:
    return -1.0 + 2.0 * np.arange(size) / size


@dataclass(frozen=True)
class BeamspaceDictionary:
    """Factored dictionary; atom ``(r, t)`` is ``kron(F^T a_T*(phi_t), W a_R(theta_r))``, unit norm.

    Correlations are evaluated as ``A_R^H R A_T*`` so the
    ``(T3*T1) x (G_r*G_t)`` matrix is only built by :meth:`atoms`.
    """

    combiner: np.ndarray
    precoder: np.ndarray
    aoa_grid: np.ndarray
    aod_grid: np.ndarray
    rx: np.ndarray
    tx: np.ndarray
    norms: np.ndarray

    @classmethod
    def build(cls, combiner: np.ndarray, precoder: np.ndarray, g_r: int = DEFAULT_GRID,
              g_t: int = DEFAULT_GRID) -> BeamspaceDictionary:
        aoa_grid, aod_grid = uniform_grid(g_r), uniform_grid(g_t)
        rx = combiner @ steering_matrix(combiner.shape[1], aoa_grid)           # T3 x Gr
        tx = precoder.T @ steering_matrix(precoder.shape[0], aod_grid).conj()  # T1 x Gt
        norms = np.outer(np.linalg.norm(rx, axis=0), np.linalg.norm(tx, axis=0))
        return cls(combiner, precoder, aoa_grid, aod_grid, rx, tx, norms)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rx.shape[0] * self.tx.shape[0], self.rx.shape[1] * self.tx.shape[1]

    def correlate(self, residual: np.ndarray) -> np.ndarray:
        """Normalised atom correlations, ``(G_r, G_t)``."""
        return (self.rx.conj().T @ residual @ self.tx.conj()) / self.norms

    def atoms(self) -> np.ndarray:
        """Materialised dictionary, column ``t*G_r + r``."""
        cols = np.einsum("tb,ra->trba", self.tx, self.rx)
        cols = cols.reshape(self.shape[0], self.tx.shape[1], self.rx.shape[1])
        return (cols / self.norms.T[None]).reshape(self.shape[0], -1)


def omp_select(r0: np.ndarray, dictionary: BeamspaceDictionary, num_paths: int):
    """Greedy support on one ``T3 x T1`` measurement.

    Returns grid AoAs, grid AoDs and the residual norm before and after every
    iteration (length ``num_paths + 1``).
    """
    if num_paths > min(dictionary.shape):
        raise ValueError(f"{num_paths} atoms exceed the dictionary rank bound {min(dictionary.shape)}")
    y = r0.T.reshape(-1)  # column-major vec
    residual = r0.copy()
    aoa, aod = [], []
    norms = [float(np.linalg.norm(residual))]
    for _ in range(num_paths):
        corr = np.abs(dictionary.correlate(residual))
        r, t = np.unravel_index(int(np.argmax(corr)), corr.shape)
        aoa.append(dictionary.aoa_grid[r])
        aod.append(dictionary.aod_grid[t])
        system = khatri_rao_system(dictionary.combiner, dictionary.precoder, np.array(aoa), np.array(aod))
        coef = np.linalg.lstsq(system, y, rcond=None)[0]
        res_vec = y - system @ coef
        residual = res_vec.reshape(r0.shape[1], r0.shape[0]).T
        norms.append(float(np.linalg.norm(residual)))
    return np.array(aoa), np.array(aod), np.array(norms)


def omp_estimate(meas: MeasurementSet, design: SoundingDesign, cfg: SystemConfig,
                 dictionary: BeamspaceDictionary | None = None) -> ChannelEstimate:
    """Baseline estimate from stage-1 measurements (whatever mask they were taken with)."""
    combiner = design.w_tail_off
    precoder = design.precoder if meas.mode == "ems" else design.f_tail_off
    if dictionary is None:
        dictionary = BeamspaceDictionary.build(combiner, precoder)
    L, gamma = cfg.num_paths, cfg.gamma
    U, K = meas.stage1.shape[:2]
    aoa = np.empty((U, L))
    aod = np.empty((U, L))
    gains = np.empty((U, K, L), dtype=complex)
    channels = np.empty((U, K, cfg.num_bs_antennas, cfg.num_user_antennas), dtype=complex)
    for u in range(U):
        aoa[u], aod[u], _ = omp_select(meas.stage1[u, 0], dictionary, L)
        gains[u] = estimate_gains(meas.stage1[u], aoa[u], aod[u], combiner, precoder, gamma, u)
        channels[u] = reconstruct(aoa[u], aod[u], gains[u], cfg.num_bs_antennas, cfg.num_user_antennas, gamma)
    return ChannelEstimate(aoa, aod, gains, channels, scheme="OMP")
