"""Construct the main example and run every study of a config, in order.

    python3 scripts/run_study.py configs/quick.json --jobs 4
"""
import argparse
import sys
from pathlib import Path

from relu_landscape.cli import main as cli
from relu_landscape.config import load_config

STEPS = ["sweep", "symmetrize", "neb", "spectra", "jitter", "report"]


def run(config: Path, jobs: int, construct_spec: Path | None) -> int:
    cfg = load_config(config)
    target_dir = cfg.resolve(cfg.target).parent
    args = ["construct", "--out", str(target_dir)]
    if construct_spec is not None:
        args += ["--config", str(construct_spec)]
    code = cli(args)
    for step in STEPS:
        if code:
            return code
        print(f"== {step}", flush=True)
        code = cli([step, "--config", str(config), "--jobs", str(jobs)])
    return code


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", type=Path)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--construct", type=Path, help="block spec for the target (default: the main example)")
    a = p.parse_args()
    sys.exit(run(a.config, a.jobs, a.construct))
