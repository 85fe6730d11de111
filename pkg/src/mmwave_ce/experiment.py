"""Monte-Carlo driver: fresh channel, sounding, every scheme, metrics.

Each (sweep point, trial) pair owns a seed derived from the experiment seed,
so results do not depend on thread scheduling.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import sounding
from .beam_design import DEFAULT_SEARCH_SAMPLES, build_designs
from .channel import generate_realization
from .config import SystemConfig
from .ems import DEFAULT_EPSILON, estimate_ems
from .metrics import nmse, spectral_efficiency
from .omp import DEFAULT_GRID, BeamspaceDictionary, omp_estimate
from .tde import estimate_tde

log = logging.getLogger(__name__)

SCHEMES = ("TDE", "EMS", "OMP")
SWEEPS = ("snr", "pilots")
CSV_FIELDS = ("scheme", "sweep_value", "nmse", "se", "pilot_slots", "wall_ms", "failures")


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep.

    ``sweep='snr'`` varies the measurement SNR over ``values`` (dB);
    ``sweep='pilots'`` sets ``t1 = t2 = value`` at fixed ``snr_db``.
    Wall time is only recorded when ``record_timing`` is set, which keeps
    result files byte-reproducible by default.
    """

    config: SystemConfig = field(default_factory=SystemConfig)
    sweep: str = "snr"
    values: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    snr_db: float = 10.0
    schemes: tuple[str, ...] = SCHEMES
    trials: int = 200
    seed: int = 0
    threads: int = 1
    min_separation: float = 0.0
    epsilon: float = DEFAULT_EPSILON
    grid_size: int = DEFAULT_GRID
    search_samples: int = DEFAULT_SEARCH_SAMPLES
    record_timing: bool = False

    def __post_init__(self) -> None:
        if self.sweep not in SWEEPS:
            raise ValueError(f"sweep must be one of {SWEEPS}")
        if not self.values:
            raise ValueError("sweep values must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        bad = [s for s in self.schemes if s.upper() not in SCHEMES]
        if bad or not self.schemes:
            raise ValueError(f"unknown schemes {bad}; choose from {SCHEMES}")
        object.__setattr__(self, "schemes", tuple(s.upper() for s in self.schemes))
        object.__setattr__(self, "values", tuple(self.values))

    def point(self, value: float) -> tuple[SystemConfig, float]:
        """Scenario and SNR for one sweep value."""
        if self.sweep == "snr":
            return self.config, float(value)
        t = int(value)
        return self.config.replace(t1=t, t2=t), self.snr_db


@dataclass(frozen=True)
class ResultRecord:
    scheme: str
    sweep_value: float
    nmse: float
    se: float
    pilot_slots: int
    wall_ms: float | None
    failures: int = 0


@dataclass
class TrialOutcome:
    nmse: dict[str, float]
    se: dict[str, float]
    wall: dict[str, float]
    errors: dict[str, str]


def trial_seed(seed: int, point_index: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, point_index, trial])


def run_trial(cfg: SystemConfig, design, dictionary, snr_db: float, schemes, seq: np.random.SeedSequence,
              epsilon: float = DEFAULT_EPSILON, min_separation: float = 0.0) -> TrialOutcome:
    """One channel draw scored by every requested scheme."""
    chan_seq, tde_seq, ems_seq = seq.spawn(3)
    real = generate_realization(cfg, np.random.default_rng(chan_seq), min_separation)
    sigma2 = sounding.noise_variance_for_snr(design, real, snr_db)
    truth = real.subcarrier_matrices
    snr_lin = 10.0 ** (snr_db / 10.0)
    streams = min(cfg.num_bs_rf, cfg.num_user_rf, cfg.num_paths)

    meas = {}
    if "TDE" in schemes:
        meas["tde"] = sounding.simulate_measurements(design, real, sounding.TDE, sigma2,
                                                     np.random.default_rng(tde_seq), snr_db)
    if "EMS" in schemes or "OMP" in schemes:
        meas["ems"] = sounding.simulate_measurements(design, real, sounding.EMS, sigma2,
                                                     np.random.default_rng(ems_seq), snr_db)
    runners: dict[str, Callable] = {
        "TDE": lambda: estimate_tde(meas["tde"], design, cfg),
        "EMS": lambda: estimate_ems(meas["ems"], design, cfg, epsilon),
        "OMP": lambda: omp_estimate(meas["ems"], design, cfg, dictionary),
    }
    out = TrialOutcome({}, {}, {}, {})
    for scheme in schemes:
        start = time.perf_counter()
        try:
            est = runners[scheme]()
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            out.errors[scheme] = f"{type(exc).__name__}: {exc}"
            continue
        out.wall[scheme] = (time.perf_counter() - start) * 1e3
        out.nmse[scheme] = nmse(est.channels, truth)
        out.se[scheme] = spectral_efficiency(est.channels, truth, snr_lin, streams)
    return out


def iter_experiment(spec: ExperimentSpec) -> Iterator[ResultRecord]:
    """Yield one record per (sweep value, scheme) as soon as the sweep point finishes."""
    designs: dict[tuple[int, int], tuple] = {}
    for idx, value in enumerate(spec.values):
        cfg, snr_db = spec.point(value)
        key = (cfg.t1, cfg.t2)
        if key not in designs:
            design = build_designs(cfg, spec.search_samples)
            dictionary = None
            if "OMP" in spec.schemes:
                dictionary = BeamspaceDictionary.build(design.w_tail_off, design.precoder,
                                                       spec.grid_size, spec.grid_size)
            designs[key] = (design, dictionary)
        design, dictionary = designs[key]

        def job(trial: int, cfg=cfg, snr_db=snr_db, design=design, dictionary=dictionary, idx=idx):
            return run_trial(cfg, design, dictionary, snr_db, spec.schemes,
                             trial_seed(spec.seed, idx, trial), spec.epsilon, spec.min_separation)

        if spec.threads > 1:
            with ThreadPoolExecutor(spec.threads) as pool:
                outcomes = list(pool.map(job, range(spec.trials)))
        else:
            outcomes = [job(t) for t in range(spec.trials)]

        for scheme in spec.schemes:
            ok = [o for o in outcomes if scheme in o.nmse]
            failures = len(outcomes) - len(ok)
            for o in outcomes:
                if scheme in o.errors:
                    log.warning("%s failed at %s=%s: %s", scheme, spec.sweep, value, o.errors[scheme])
            mode = sounding.TDE if scheme == "TDE" else sounding.EMS
            slots = sounding.pilot_slots(mode, cfg.num_subcarriers, cfg.num_users, cfg.t1, cfg.t2)
            if scheme == "OMP":
                slots = cfg.num_subcarriers * cfg.num_users * cfg.t1 * cfg.t2
            yield ResultRecord(
                scheme=scheme,
                sweep_value=float(value),
                nmse=float(np.mean([o.nmse[scheme] for o in ok])) if ok else float("nan"),
                se=float(np.mean([o.se[scheme] for o in ok])) if ok else float("nan"),
                pilot_slots=slots,
                wall_ms=float(np.mean([o.wall[scheme] for o in ok])) if ok and spec.record_timing else None,
                failures=failures,
            )


def run_experiment(spec: ExperimentSpec) -> list[ResultRecord]:
    return list(iter_experiment(spec))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ResultWriter:
    """Streams records to ``<out>.csv`` and writes the JSON twin on close."""

    def __init__(self, out: str | Path, spec: ExperimentSpec | None = None):
        out = Path(out)
        self.csv_path = out.with_suffix(".csv")
        self.json_path = out.with_suffix(".json")
        self.spec = spec
        self.records: list[ResultRecord] = []
        self.csv_path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.csv_path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(CSV_FIELDS)

    def write(self, record: ResultRecord) -> None:
        self.records.append(record)
        self._writer.writerow([_fmt(getattr(record, f)) for f in CSV_FIELDS])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()
        payload = {"records": [asdict(r) for r in self.records]}
        if self.spec is not None:
            spec = asdict(self.spec)
            spec["values"] = list(spec["values"])
            spec["schemes"] = list(spec["schemes"])
            payload["spec"] = spec
        self.json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def __enter__(self) -> ResultWriter:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_results(records, out: str | Path, spec: ExperimentSpec | None = None) -> tuple[Path, Path]:
    with ResultWriter(out, spec) as w:
        for r in records:
            w.write(r)
    return w.csv_path, w.json_path
