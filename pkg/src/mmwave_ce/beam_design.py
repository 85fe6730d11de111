"""Hybrid combiner/precoder design with near-uniform angular gain.

The sine-angle range [-1, 1) is cut into equal sectors, one per combiner row
(or precoder column). Each row is the closed-form least-squares beam whose
response over its sector is ``sqrt(xi) * exp(j*a*theta)``; the slope ``a``
is picked on a grid to maximise the fraction of beam power landing inside
the sector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .channel import steering_matrix
from .config import SystemConfig

log = logging.getLogger(__name__)

DEFAULT_SEARCH_SAMPLES = 1000


def sector_bounds(n: int, n_sectors: int) -> tuple[float, float]:
    """Sector ``n`` (1-based) as the half-open interval ``[lo, hi)``."""
    if not 1 <= n <= n_sectors:
        raise ValueError(f"sector index {n} outside 1..{n_sectors}")
    return -1.0 + 2.0 * (n - 1) / n_sectors, -1.0 + 2.0 * n / n_sectors


def _exp_integral(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    # (exp(j x hi) - exp(j x lo)) / (j x), written so x -> 0 is exact.
    width = hi - lo
    return np.exp(1j * x * (lo + hi) / 2.0) * width * np.sinc(x * width / (2.0 * np.pi))


def row_closed_form(n: int, a: float, n_antennas: int, n_sectors: int, amplitude: float = 1.0) -> np.ndarray:
    """Beam weight vector for sector ``n`` with phase slope ``a``.

    Element ``m`` is ``(sqrt(amplitude)/2) * sqrt(N) * integral over the
    sector of exp(j(m*pi - a)*theta)``; ``amplitude`` is the gain level
    ``xi`` and is usually fixed afterwards by normalisation.
    """
    lo, hi = sector_bounds(n, n_sectors)
    m = np.arange(n_antennas)
    return 0.5 * np.sqrt(amplitude * n_antennas) * _exp_integral(m * np.pi - a, lo, hi)


def sector_gram(n: int, n_antennas: int, n_sectors: int) -> np.ndarray:
    """``X = integral over sector n of a(theta) a(theta)^H``."""
    lo, hi = sector_bounds(n, n_sectors)
    k = np.subtract.outer(np.arange(n_antennas), np.arange(n_antennas))
    return _exp_integral(k * np.pi, lo, hi) / n_antennas


def power_ratio(a, n: int, n_antennas: int, n_sectors: int):
    """Fraction of a sector beam's angular power that falls inside its sector.

    ``a`` may be a scalar or an array of slopes. The ratio is invariant to the
    beam's overall scale, so no amplitude argument is needed.
    """
    slopes = np.atleast_1d(np.asarray(a, dtype=float))
    lo, hi = sector_bounds(n, n_sectors)
    m = np.arange(n_antennas)
    w = 0.5 * np.sqrt(n_antennas) * _exp_integral(m[None, :] * np.pi - slopes[:, None], lo, hi)
    gram = sector_gram(n, n_antennas, n_sectors)
    inside = np.einsum("bi,ij,bj->b", w.conj(), gram, w).real
    total = 2.0 / n_antennas * np.sum(np.abs(w) ** 2, axis=1)
    ratio = inside / total
    if np.ndim(a) == 0:
        return float(ratio[0])
    return ratio


def slope_grid(n_antennas: int, n_sectors: int, samples: int) -> np.ndarray:
    """Equally spaced candidate slopes over ``[(N-1)pi/2, (N-1)pi + n_sectors*pi)``."""
    start = (n_antennas - 1) * np.pi / 2.0
    span = (n_antennas - 1) * np.pi / 2.0 + n_sectors * np.pi
    return start + span * np.arange(samples) / samples


def search_phase_slope(n_antennas: int, n_sectors: int, samples: int = DEFAULT_SEARCH_SAMPLES) -> float:
    """Grid slope with the largest in-sector power ratio (first index on ties).

    Only the upper half of the symmetric search range is scanned since the
    ratio is symmetric about ``(N-1)pi/2``.
    """
    if samples < 2:
        raise ValueError("need at least 2 search samples")
    grid = slope_grid(n_antennas, n_sectors, samples)
    ratios = power_ratio(grid, 1, n_antennas, n_sectors)
    return float(grid[int(np.argmax(ratios))])


@dataclass(frozen=True)
class SectorRow:
    index: int
    interval: tuple[float, float]
    weights: np.ndarray


def sector_rows(n_antennas: int, n_sectors: int, slope: float, row_power: float) -> list[SectorRow]:
    """All sector beams with ``||w_n||^2 = row_power``."""
    rows = []
    for n in range(1, n_sectors + 1):
        w = row_closed_form(n, slope, n_antennas, n_sectors)
        w = w * np.sqrt(row_power) / np.linalg.norm(w)
        rows.append(SectorRow(n, sector_bounds(n, n_sectors), w))
    return rows


@dataclass(frozen=True)
class SoundingDesign:
    """Combiner ``W`` (T3 x N_A), precoder ``F`` (M_A x T1) and their antenna-masked forms.

    ``w_tail_off = [W~, 0]`` and ``w_head_off = [0, W~]`` where ``W~`` is the
    first ``N_A - 1`` columns of ``W``; likewise ``f_tail_off = [F~; 0]`` and
    ``f_head_off = [0; F~]`` with ``F~`` the first ``M_A - 1`` rows of ``F``.
    The same precoder is used by every user.
    """

    combiner: np.ndarray
    precoder: np.ndarray
    w_tail_off: np.ndarray
    w_head_off: np.ndarray
    f_tail_off: np.ndarray
    f_head_off: np.ndarray
    num_bs_rf: int
    combiner_slope: float | None = None
    precoder_slope: float | None = None

    @property
    def t3(self) -> int:
        return self.combiner.shape[0]

    @property
    def t1(self) -> int:
        return self.precoder.shape[1]

    @property
    def w_reduced(self) -> np.ndarray:
        return self.combiner[:, :-1]

    @property
    def f_reduced(self) -> np.ndarray:
        return self.precoder[:-1, :]

    @classmethod
    def from_matrices(cls, combiner, precoder, num_bs_rf: int = 1, *, check_rank: bool = True,
                      combiner_slope: float | None = None,
                      precoder_slope: float | None = None) -> SoundingDesign:
        W = np.asarray(combiner, dtype=complex)
        F = np.asarray(precoder, dtype=complex)
        if W.shape[0] % num_bs_rf:
            raise ValueError("combiner rows must be a multiple of num_bs_rf")
        w_red = W[:, :-1]
        f_red = F[:-1, :]
        zc = np.zeros((W.shape[0], 1), dtype=complex)
        zr = np.zeros((1, F.shape[1]), dtype=complex)
        if check_rank:
            if np.linalg.matrix_rank(w_red) < W.shape[0]:
                raise ValueError(f"masked combiner is rank deficient ({W.shape[0]} rows, "
                                 f"{w_red.shape[1]} active antennas)")
            if np.linalg.matrix_rank(f_red) < F.shape[1]:
                raise ValueError(f"masked precoder is rank deficient ({F.shape[1]} columns, "
                                 f"{f_red.shape[0]} active antennas)")
        return cls(
            combiner=W, precoder=F,
            w_tail_off=np.hstack([w_red, zc]), w_head_off=np.hstack([zc, w_red]),
            f_tail_off=np.vstack([f_red, zr]), f_head_off=np.vstack([zr, f_red]),
            num_bs_rf=num_bs_rf, combiner_slope=combiner_slope, precoder_slope=precoder_slope,
        )


def build_designs(cfg: SystemConfig, search_samples: int = DEFAULT_SEARCH_SAMPLES) -> SoundingDesign:
    """Sector-beam combiner and precoder for ``cfg``, each with unit Frobenius norm."""
    a_w = search_phase_slope(cfg.num_bs_antennas, cfg.t3, search_samples)
    a_f = search_phase_slope(cfg.num_user_antennas, cfg.t1, search_samples)
    w_rows = sector_rows(cfg.num_bs_antennas, cfg.t3, a_w, cfg.t2 / cfg.t3)
    f_cols = sector_rows(cfg.num_user_antennas, cfg.t1, a_f, 1.0 / cfg.t1)

    W = np.array([r.weights.conj() for r in w_rows])
    W /= np.linalg.norm(W)
    F = np.array([c.weights for c in f_cols]).T
    F /= np.linalg.norm(F)
    design = SoundingDesign.from_matrices(W, F, cfg.num_bs_rf, combiner_slope=a_w, precoder_slope=a_f)
    log.debug("combiner flatness %.3f, precoder flatness %.3f",
              flatness(W)["max_over_min"], flatness(F.conj().T)["max_over_min"])
    return design


def flatness(combiner: np.ndarray, grid_points: int = 512) -> dict[str, float]:
    """Spread of ``||W a(theta)||^2`` over a uniform sine-angle grid.

    For a precoder pass ``F.conj().T``, since ``||F^T a*(phi)|| = ||F^H a(phi)||``.
    """
    n_antennas = combiner.shape[1]
    theta = -1.0 + 2.0 * np.arange(grid_points) / grid_points
    gains = np.sum(np.abs(combiner @ steering_matrix(n_antennas, theta)) ** 2, axis=0)
    lo, hi = float(gains.min()), float(gains.max())
    return {
        "min_gain": lo,
        "max_gain": hi,
        "mean_gain": float(gains.mean()),
        "max_over_min": hi / lo if lo > 0 else float("inf"),
        "ripple_db": 10.0 * np.log10(hi / lo) if lo > 0 else float("inf"),
    }
