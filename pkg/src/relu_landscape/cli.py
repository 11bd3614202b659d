"""Command-line entry point: ``relu-landscape <command> [--config ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import ConfigError, RunConfig, load_config
from .net_core import ContractError
from .records import SchemaError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_MISSING = 4
EXIT_DIVERGED = 5

log = logging.getLogger("relu_landscape")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relu-landscape", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config (a run manifest also works)")
    common.add_argument("--seed", type=int, help="override the seed of this command")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("construct", parents=[common], help="build the target function and perfect-fit weights")
    for name, text in [("sweep", "train many networks to the target"),
                       ("symmetrize", "distances and directions between canonical minima"),
                       ("neb", "nudged elastic band paths from the global minimum to fits"),
                       ("spectra", "Hessian eigenvalues at the global minimum and at fits"),
                       ("jitter", "retrain from perturbed global minima"),
                       ("report", "rebuild CSV statistics and SVG plots of a run directory")]:
        sub.add_parser(name, parents=[common], help=text)
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cmd = args.command
        if cmd == "sweep":
            cfg.sweep = replace(cfg.sweep, base_seed=args.seed)
        elif cmd == "jitter":
            cfg.jitter = replace(cfg.jitter, seed=args.seed)
        else:
            cfg.analysis = replace(cfg.analysis, seed=args.seed)
    return cfg


def _construct(args) -> int:
    d = json.loads(args.config.read_text()) if args.config else {}
    if args.seed is not None:
        d["spline_seed"] = args.seed
    spec, opts = pipeline.spec_from_dict(d)
    summary = pipeline.construct(spec, args.out or Path("."), **opts)
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK


def run(args) -> int:
    if args.command == "construct":
        return _construct(args)
    if args.command == "report":
        if args.out is not None:
            target = args.out
            cfg = load_config(args.config) if args.config else None
        else:
            cfg = _config(args)
            target = cfg.resolve(cfg.output)
        made = pipeline.report(target, cfg)
        print(f"report written to {target}: {', '.join(made) or 'stats only'}")
        return EXIT_OK
    cfg = _config(args)
    if args.command == "sweep":
        res = pipeline.sweep(cfg, args.out, args.jobs)
        print(f"{res['fits']} fits written, {res['excluded']} excluded")
    elif args.command == "symmetrize":
        for name, s in pipeline.symmetrize(cfg, args.out).items():
            print(f"{name}: n={s['n']} min pair distance={s['pair_min']:.4g} "
                  f"min distance to global={s['ref_min']:.4g} min direction dot={s['dot_min']:.4g}")
    elif args.command == "neb":
        for s in pipeline.neb(cfg, args.out, args.jobs):
            print(f"path {s.label}: plateau={s.plateau:.4g} fit end={s.fit_energy:.4g} "
                  f"max={s.max_energy:.4g} converged={s.converged}")
    elif args.command == "spectra":
        for s in pipeline.spectra(cfg, args.out):
            print(f"{s['label']}: min/max={s['min_ratio']:.3g} below 1% of max={s['small_fraction']:.2f}")
    elif args.command == "jitter":
        res = pipeline.jitter(cfg, args.out, args.jobs)
        lg = res.logistic
        print("logistic fit: degenerate" if lg.degenerate else
              f"logistic fit: intercept={lg.intercept:.4g} slope={lg.slope:.4g}")
    pipeline.report(pipeline._rundir(cfg, args.out), cfg)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except pipeline.TooManyDivergences as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (pipeline.MissingInput, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, SchemaError, ContractError, json.JSONDecodeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
