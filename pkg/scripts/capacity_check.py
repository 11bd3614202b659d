"""Fit larger networks to the main example with adadelta and report the best loss.

    python3 scripts/capacity_check.py --layers 15 --width 15 --seeds 8 --out runs/capacity.csv
"""
import argparse
import time

import numpy as np

from relu_landscape.constructor import build_perfect_fit, default_block_spec, extract_knots, sample_training_set
from relu_landscape.experiments import _map
from relu_landscape.net_core import Architecture
from relu_landscape.optim import OptimizerConfig, train_seed
from relu_landscape.records import write_csv


def fit(job):
    arch, data, cfg, seed = job
    t = time.perf_counter()
    rec = train_seed(arch, data, cfg, seed)
    return seed, rec.final_loss, min(v for _, v in rec.loss_trace), time.perf_counter() - t


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--layers", type=int, default=15)
    p.add_argument("--width", type=int, default=15)
    p.add_argument("--seeds", type=int, default=8)
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=50_000)
    p.add_argument("--optimizer", default="adadelta", choices=["adadelta", "gd_momentum"])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="CSV of seed, final loss, best loss along the trace")
    a = p.parse_args()

    base, w = build_perfect_fit(default_block_spec())
    data = sample_training_set(extract_knots(base, w))
    arch = Architecture(a.layers, a.width)
    cfg = OptimizerConfig(kind=a.optimizer, steps=a.steps, record_every=10)
    jobs = [(arch, data, cfg, s) for s in range(a.first_seed, a.first_seed + a.seeds)]
    rows = _map(fit, jobs, a.jobs)
    for seed, final, best, dt in rows:
        print(f"seed {seed}: final {final:.3e}  best {best:.3e}  ({dt:.0f}s)")
    print(f"best over seeds: {min(r[2] for r in rows):.3e}  median final: {np.median([r[1] for r in rows]):.3e}")
    if a.out:
        write_csv(a.out, ["seed", "final_loss", "best_loss", "seconds"], rows)


if __name__ == "__main__":
    main()
