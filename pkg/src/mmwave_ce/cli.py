"""Command-line entry point: ``mmwave-ce {run,design,simulate,estimate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, sounding
from .beam_design import build_designs, flatness
from .channel import generate_realization
from .config import SystemConfig
from .ems import estimate_ems
from .experiment import ExperimentSpec, ResultWriter, iter_experiment
from .metrics import nmse
from .omp import omp_estimate
from .tde import estimate_tde

log = logging.getLogger("mmwave_ce")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _names(text: str) -> list[str]:
    return [v.upper() for v in text.replace(",", " ").split()]


def _load(args) -> tuple[SystemConfig, dict]:
    if args.config:
        return io.load_config(args.config)
    return SystemConfig(), {}


def cmd_run(args) -> int:
    cfg, exp = _load(args)
    out = args.out or exp.pop("output", None) or "results"
    exp.pop("output", None)
    if args.seed is not None:
        exp["seed"] = args.seed
    if args.snr_db is not None:
        exp["sweep"], exp["values"] = "snr", _floats(args.snr_db)
    if args.schemes is not None:
        exp["schemes"] = _names(args.schemes)
    if args.trials is not None:
        exp["trials"] = args.trials
    if args.threads is not None:
        exp["threads"] = args.threads
    for key in ("values", "schemes"):
        if key in exp:
            exp[key] = tuple(exp[key])
    spec = ExperimentSpec(config=cfg, **exp)
    with ResultWriter(out, spec) as writer:
        for rec in iter_experiment(spec):
            writer.write(rec)
            print(f"{rec.scheme:4s} {spec.sweep}={rec.sweep_value:g} nmse={rec.nmse:.4g} "
                  f"se={rec.se:.4g} slots={rec.pilot_slots} failures={rec.failures}")
    print(f"wrote {writer.csv_path} and {writer.json_path}")
    return 0


def cmd_design(args) -> int:
    cfg, _ = _load(args)
    design = build_designs(cfg)
    out = Path(args.out or "codebooks")
    paths = io.export_codebooks(design, out, args.format)
    report = {
        "combiner_slope": design.combiner_slope,
        "precoder_slope": design.precoder_slope,
        "combiner": flatness(design.combiner),
        "precoder": flatness(design.precoder.conj().T),
    }
    (out / "flatness.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for name in ("combiner", "precoder"):
        r = report[name]
        print(f"{name}: gain {r['min_gain']:.4f}..{r['max_gain']:.4f}, ripple {r['ripple_db']:.2f} dB")
    print("wrote " + ", ".join(str(p) for p in paths + [out / "flatness.json"]))
    return 0


def cmd_simulate(args) -> int:
    cfg, _ = _load(args)
    seed = 0 if args.seed is None else args.seed
    snr = None if args.snr_db is None else _floats(args.snr_db)[0]
    rng = np.random.default_rng(seed)
    design = build_designs(cfg)
    real = generate_realization(cfg, rng)
    sigma2 = cfg.noise_variance if snr is None else sounding.noise_variance_for_snr(design, real, snr)
    meas = sounding.simulate_measurements(design, real, args.mode, sigma2, rng, snr, seed)
    path = io.save_measurements(args.out or f"measurements_{args.mode}.npz", meas, cfg,
                                real.subcarrier_matrices)
    print(f"wrote {path} (mode={args.mode}, noise variance {sigma2:.4g})")
    return 0


def cmd_estimate(args) -> int:
    meas, cfg, truth = io.load_measurements(args.measurements)
    design = build_designs(cfg)
    schemes = _names(args.schemes) if args.schemes else (["TDE"] if meas.mode == sounding.TDE else ["EMS"])
    runners = {
        "TDE": lambda: estimate_tde(meas, design, cfg),
        "EMS": lambda: estimate_ems(meas, design, cfg),
        "OMP": lambda: omp_estimate(meas, design, cfg),
    }
    status = 0
    for scheme in schemes:
        try:
            est = runners[scheme]()
        except (KeyError, ValueError, np.linalg.LinAlgError) as exc:
            print(f"{scheme}: failed ({exc})", file=sys.stderr)
            status = 1
            continue
        line = f"{scheme}: estimated {est.channels.shape[0]} users"
        if truth is not None:
            line += f", nmse={nmse(est.channels, truth):.4g}"
        for user, msg in est.flags:
            line += f"\n  user {user}: {msg}"
        print(line)
        if args.out:
            target = Path(args.out)
            target = target.with_name(f"{target.stem}_{scheme.lower()}.npz")
            print(f"wrote {io.save_estimate(target, est)}")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmwave-ce", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, run_flags=False):
        p.add_argument("--config", help="YAML file with system/experiment sections")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if run_flags:
            p.add_argument("--snr-db", help="comma-separated SNR values in dB")
            p.add_argument("--schemes", help="comma-separated subset of TDE,EMS,OMP")
            p.add_argument("--trials", type=int)
            p.add_argument("--threads", type=int)

    p = sub.add_parser("run", help="Monte-Carlo sweep to CSV/JSON")
    common(p, run_flags=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("design", help="emit codebooks and a flatness report")
    common(p)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="draw one channel and dump its measurements")
    common(p)
    p.add_argument("--snr-db", help="measurement SNR in dB (default: config noise_variance)")
    p.add_argument("--mode", choices=sounding.MODES, default=sounding.TDE)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="replay a measurement dump")
    p.add_argument("measurements")
    p.add_argument("--schemes")
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
