"""Scenario constants shared by every stage of the simulation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any


@dataclass(frozen=True)
class SystemConfig:
    """Uplink multi-user mmWave OFDM scenario.

    Defaults reproduce the desk-scale setup: 64-antenna BS with 4 RF chains,
    4 users with 16 antennas and 1 RF chain each, 3 paths, 16 subcarriers,
    4 delay taps, T1 = 12 precoders and T2 = 8 combiners.

    Angles are handled in the sine domain throughout; delays are in seconds.
    ``max_delay_spread`` of ``None`` means five sample intervals.
    """

    num_bs_antennas: int = 64
    num_user_antennas: int = 16
    num_bs_rf: int = 4
    num_user_rf: int = 1
    num_users: int = 4
    num_subcarriers: int = 16
    num_taps: int = 4
    num_paths: int = 3
    t1: int = 12
    t2: int = 8
    noise_variance: float = 0.0
    sample_interval: float = 1.0
    max_delay_spread: float | None = None
    pulse_rolloff: float = 0.8
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("num_bs_antennas", "num_user_antennas", "num_bs_rf", "num_user_rf",
                     "num_users", "num_subcarriers", "num_taps", "num_paths", "t1", "t2"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.num_bs_rf >= self.num_bs_antennas:
            raise ValueError("num_bs_rf must be smaller than num_bs_antennas")
        if self.num_user_rf >= self.num_user_antennas:
            raise ValueError("num_user_rf must be smaller than num_user_antennas")
        if self.t3 < self.num_paths or self.t1 < self.num_paths:
            raise ValueError(
                f"need t2*num_bs_rf >= num_paths and t1 >= num_paths "
                f"(t3={self.t3}, t1={self.t1}, num_paths={self.num_paths})"
            )
        if self.num_taps > self.num_subcarriers:
            raise ValueError("num_taps cannot exceed num_subcarriers")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        if self.sample_interval <= 0:
            raise ValueError("sample_interval must be > 0")
        if self.max_delay_spread is not None and self.max_delay_spread < 0:
            raise ValueError("max_delay_spread must be >= 0")
        if not 0.0 <= self.pulse_rolloff <= 1.0:
            raise ValueError("pulse_rolloff must lie in [0, 1]")

    @property
    def t3(self) -> int:
        """Number of stacked combiner rows, T2 * N_R."""
        return self.t2 * self.num_bs_rf

    @property
    def delay_spread(self) -> float:
        if self.max_delay_spread is None:
            return 5.0 * self.sample_interval
        return self.max_delay_spread

    @property
    def gamma(self) -> float:
        return float((self.num_bs_antennas * self.num_user_antennas / self.num_paths) ** 0.5)

    def replace(self, **changes: Any) -> SystemConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SystemConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown SystemConfig keys: {sorted(unknown)}")
        return cls(**data)
