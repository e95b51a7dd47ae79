"""Command line entry point: ``hvlab run|raster|validate CONFIG``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
import scipy.fft

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import AcceptanceFailure, ConfigError, NumericalFailure

EXIT_OK, EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "HVLAB_OUTPUT_ROOT"

log = logging.getLogger("hvlab")


def output_dir(cfg: ExperimentConfig, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.outputs.directory:
        return Path(cfg.outputs.directory)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "hvlab-output"))
    return root / f"{cfg.scenario}-{cfg.digest()[:12]}"


def versions() -> dict:
    return {"hvlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(out_dir: Path, cfg: ExperimentConfig, files, command: str) -> None:
    manifest = {
        "command": command,
        "scenario": cfg.scenario,
        "config_sha256": cfg.digest(),
        "seed": cfg.numerics.seed,
        "versions": versions(),
        "files": sorted(files),
        "config": cfg.model_dump(mode="json"),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.model_copy(update={"numerics": cfg.numerics.model_copy(update={"seed": args.seed})})
    return cfg


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"{args.config}: ok ({cfg.scenario}, sha256 {cfg.digest()[:12]})")
    return EXIT_OK


def cmd_run(args) -> int:
    from .scenarios import run_scenario

    cfg = _load(args)
    out = output_dir(cfg, args.out_dir)
    outcome = run_scenario(cfg, out, workers=args.threads)
    lines = [c.line() for c in outcome.checks]
    status = "PASS" if outcome.passed else "FAIL"
    with open(out / "summary.txt", "w") as fh:
        fh.write("\n".join(lines + [f"{status} {cfg.scenario}"]) + "\n")
    with open(out / "summary.json", "w") as fh:
        json.dump({"scenario": cfg.scenario, "passed": outcome.passed,
                   "checks": [c.to_json() for c in outcome.checks]}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out, cfg, outcome.files + ["summary.txt", "summary.json"], "run")
    for line in lines:
        print(line)
    print(f"{status} {cfg.scenario} -> {out}")
    if not outcome.passed:
        raise AcceptanceFailure(f"{sum(not c.passed for c in outcome.checks)} check(s) failed")
    return EXIT_OK


def cmd_raster(args) -> int:
    from .scenarios import write_rasters

    cfg = _load(args)
    out = output_dir(cfg, args.out_dir)
    files = write_rasters(cfg, out, workers=args.threads)
    write_manifest(out, cfg, files, "raster")
    for f in files:
        print(out / f)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hvlab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hvlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, hlp in (("run", cmd_run, "run a scenario and score it"),
                            ("raster", cmd_raster, "write density/velocity rasters"),
                            ("validate", cmd_validate, "check a configuration file")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("config", help="TOML experiment file")
        p.add_argument("--seed", type=int, help="override numerics.seed")
        if name != "validate":
            p.add_argument("--out-dir", help="output directory (default: outputs.directory, "
                                             f"then ${OUTPUT_ROOT_ENV}/<scenario>-<hash>)")
            p.add_argument("--threads", type=int, default=None, help="FFT worker threads")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "threads", None):
            with scipy.fft.set_workers(args.threads):
                return args.func(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except AcceptanceFailure as exc:
        print(f"acceptance failure: {exc}", file=sys.stderr)
        return EXIT_ACCEPTANCE


if __name__ == "__main__":
    sys.exit(main())
