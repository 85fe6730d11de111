"""Config files, measurement dumps and codebook export."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .beam_design import SoundingDesign
from .config import SystemConfig
from .sounding import MeasurementSet
from .tde import ChannelEstimate

EXPERIMENT_KEYS = {
    "sweep", "values", "snr_db", "schemes", "trials", "seed", "threads", "min_separation",
    "epsilon", "grid_size", "search_samples", "record_timing", "output",
}


def load_config(path: str | Path) -> tuple[SystemConfig, dict[str, Any]]:
    """Read a YAML file with optional ``system:`` and ``experiment:`` sections.

    Returns the scenario and the raw experiment mapping (output path included).
    """
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    unknown = set(raw) - {"system", "experiment"}
    if unknown:
        raise ValueError(f"{path}: unknown sections {sorted(unknown)}")
    cfg = SystemConfig.from_dict(raw.get("system") or {})
    exp = dict(raw.get("experiment") or {})
    bad = set(exp) - EXPERIMENT_KEYS
    if bad:
        raise ValueError(f"{path}: unknown experiment keys {sorted(bad)}")
    return cfg, exp


def save_measurements(path: str | Path, meas: MeasurementSet, cfg: SystemConfig,
                      truth: np.ndarray | None = None) -> Path:
    """Write a measurement set, its scenario and optionally the true channels to ``.npz``."""
    path = Path(path)
    arrays = {"stage1": meas.stage1, "stage2": meas.stage2}
    if meas.stage3 is not None:
        arrays["stage3"] = meas.stage3
    if truth is not None:
        arrays["truth"] = np.asarray(truth)
    meta = {
        "mode": meas.mode,
        "noise_variance": meas.noise_variance,
        "snr_db": meas.snr_db,
        "rng_seed": meas.rng_seed,
        "config": cfg.to_dict(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_measurements(path: str | Path) -> tuple[MeasurementSet, SystemConfig, np.ndarray | None]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        stage3 = data["stage3"] if "stage3" in data.files else None
        truth = data["truth"] if "truth" in data.files else None
        meas = MeasurementSet(meta["mode"], data["stage1"], data["stage2"], stage3,
                              meta["noise_variance"], meta["snr_db"], meta["rng_seed"])
    return meas, SystemConfig.from_dict(meta["config"]), truth


def save_estimate(path: str | Path, est: ChannelEstimate) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, aoa=est.aoa, aod=est.aod, gains=est.gains, channels=est.channels,
                        scheme=np.array(est.scheme),
                        flags=np.array(json.dumps([list(f) for f in est.flags])))
    return path


def _complex_rows(mat: np.ndarray) -> list[list[list[float]]]:
    return [[[float(z.real), float(z.imag)] for z in row] for row in mat]


def export_codebooks(design: SoundingDesign, out_dir: str | Path, fmt: str = "json") -> list[Path]:
    """Write ``W`` and ``F`` as ``combiner.<fmt>`` and ``precoder.<fmt>``.

    JSON stores nested ``[re, im]`` pairs; CSV has one row per matrix entry
    (``row, col, re, im``).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, mat in (("combiner", design.combiner), ("precoder", design.precoder)):
        if fmt == "json":
            path = out_dir / f"{name}.json"
            path.write_text(json.dumps({"shape": list(mat.shape), "entries": _complex_rows(mat)}) + "\n")
        elif fmt == "csv":
            path = out_dir / f"{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["row", "col", "re", "im"])
                for (i, j), z in np.ndenumerate(mat):
                    w.writerow([i, j, repr(float(z.real)), repr(float(z.imag))])
        else:
            raise ValueError(f"unknown codebook format {fmt!r}")
        written.append(path)
    return written


def load_codebook(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        arr = np.array(data["entries"], dtype=float)
        return (arr[..., 0] + 1j * arr[..., 1]).reshape(data["shape"])
    rows = list(csv.DictReader(open(path, newline="")))
    n_r = max(int(r["row"]) for r in rows) + 1
    n_c = max(int(r["col"]) for r in rows) + 1
    mat = np.zeros((n_r, n_c), dtype=complex)
    for r in rows:
        mat[int(r["row"]), int(r["col"])] = float(r["re"]) + 1j * float(r["im"])
    return mat
