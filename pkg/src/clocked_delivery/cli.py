"""Command line entry point.

    clocked-delivery <subcommand> [--config FILE] [--set key.path=value ...] [--out DIR] [--seed N]

Subcommands run their stage and everything it depends on; ``pipeline`` runs
all of them. Every output carries the config hash and each run writes
``manifest.json``. Exit codes: 0 ok, 2 config error, 3 numerical failure,
4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, pipeline
from .config import ConfigError, config_hash, default_config_path, load_config
from .dynamics import export_trajectories, write_summary
from .errors import SimulationError
from .optics import write_spectrum_csv
from .clocking import write_tags

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
STAGES = ("trajectories", "spectrum", "clockfold", "fit", "capture", "pipeline")

log = logging.getLogger("clocked_delivery")


class Run:
    """Output directory bookkeeping: stamps files with the config hash, lists them in the manifest."""

    def __init__(self, cfg, subcommand: str):
        self.cfg = cfg
        self.sub = subcommand
        self.hash = config_hash(cfg)
        self.dir = Path(cfg.output_dir)
        self.outputs: list = []
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.outputs.append(name)
        return p

    def stamp_csv(self, name: str) -> None:
        p = self.dir / name
        body = p.read_text()
        p.write_text(f"# config_sha256={self.hash}\n" + body)

    def json(self, name: str, data: dict) -> None:
        data = dict(data, config_sha256=self.hash)
        with open(self.path(name), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_jsonable)

    def manifest(self, status: str, error: str = "") -> None:
        m = {"subcommand": self.sub, "status": status, "config_sha256": self.hash, "seed": self.cfg.seed,
             "config": self.cfg.model_dump(mode="json"), "outputs": self.outputs,
             "wall_time_s": round(time.perf_counter() - self.t0, 3),
             "versions": {"clocked_delivery": __version__, "python": platform.python_version(),
                          "numpy": np.__version__, "scipy": scipy.__version__}}
        if error:
            m["error"] = error
        with open(self.dir / "manifest.json", "w") as fh:
            json.dump(m, fh, indent=2, sort_keys=True)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _csv(run: Run, name: str, writer) -> None:
    writer(run.path(name))
    run.stamp_csv(name)


def execute(run: Run) -> None:
    cfg = run.cfg
    sub = run.sub
    wants = {s: (sub == s or sub == "pipeline") for s in STAGES}
    chain = ("trajectories", "spectrum", "clockfold", "fit")
    depth = max((chain.index(s) for s in chain if wants[s]), default=-1)
    if depth >= 0:
        log.info("integrating %d atoms", cfg.ensemble.atoms_per_pancake * cfg.ensemble.pancakes)
        cad = cfg.integrator.cadence_ns * 1e-9 if sub == "trajectories" else None
        tr = pipeline.run_trajectories(cfg, cadence=cad)
        if cfg.trajectories.export and (sub in ("trajectories", "pipeline")):
            _csv(run, "trajectories.csv", lambda p: export_trajectories(
                tr.trajectories, p, tr.stack.geometry, stride=cfg.trajectories.export_stride))
        run.json("trajectory_summary.json", tr.summary)
    if depth >= 1:
        log.info("computing transfer-matrix spectra")
        sp = pipeline.run_spectrum(cfg, tr)
        _csv(run, "spectrum_raw.csv", lambda p: write_spectrum_csv(p, sp.times, sp.detunings, sp.T))
    if depth >= 2:
        log.info("simulating tags and folding")
        ck = pipeline.run_clockfold(cfg, sp, tr.window)
        _csv(run, "clocked_spectrum.csv", ck.noisy.write_csv)
        _csv(run, "clocked_ideal.csv", lambda p: ck.ideal.write_csv(p, aligned=False))
        _csv(run, "projection.csv", lambda p: pipeline.write_projection_csv(p, ck.ideal, ck.noisy))
        run.json("alignment.json", ck.alignment)
        if ck.streams:
            for i, (a, _) in enumerate(ck.streams):
                _csv(run, f"tags_{i:03d}.csv", lambda p, a=a: write_tags(a, p))
    if depth >= 3:
        log.info("fitting")
        fs = pipeline.run_fit(cfg, ck)
        _csv(run, "fit.csv", fs.write_csv)
    if wants["capture"] and (sub == "capture" or cfg.capture.enabled):
        log.info("capture Monte Carlo")
        res = pipeline.run_capture(cfg)
        run.json("capture.json", res.report())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clocked-delivery", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="TOML run config (default: bundled default)")
        p.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value by dotted path")
        p.add_argument("--out", "-o", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--verbose", "-v", action="store_true")
    sub.add_parser("config", help="print the bundled default config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config":
        sys.stdout.write(default_config_path().read_text())
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config or default_config_path(), args.set, seed=args.seed, output_dir=args.out)
    except ConfigError as e:
        for path, msg in e.problems:
            print(f"config error: {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"cannot create output directory: {e}", file=sys.stderr)
        return EXIT_IO
    run = Run(cfg, args.command)
    code, status, err = EXIT_OK, "ok", ""
    try:
        execute(run)
    except (SimulationError, np.linalg.LinAlgError, FloatingPointError) as e:
        code, status, err = EXIT_NUMERIC, "numerical_failure", f"{type(e).__name__}: {e}"
    except OSError as e:
        code, status, err = EXIT_IO, "io_error", str(e)
    if err:
        print(err, file=sys.stderr)
    try:
        run.manifest(status, err)
    except OSError as e:
        print(f"cannot write manifest: {e}", file=sys.stderr)
        return EXIT_IO
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
