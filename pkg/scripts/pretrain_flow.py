"""Pretrain shift networks on the two-bump field, then compare a warm-started
run against random initialisation on a field with perturbed slopes.

    python3 scripts/pretrain_flow.py --budget 6000 --seeds 1 2 3 4
"""
import argparse
from dataclasses import replace

import numpy as np

from nspod.config import load_config
from nspod.data import two_bump_field
from nspod.experiments import epochs_to_target, load_data, pretrain_shift

TARGET = 0.1


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="pretrain")
    ap.add_argument("--pretrain-epochs", type=int, default=None)
    ap.add_argument("--budget", type=int, default=6000, help="epoch cap of each comparison run")
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--slopes", type=float, nargs=2, default=[-7.5, 6.5])
    args = ap.parse_args()

    cfg = load_config(args.config)
    base = cfg.training
    if args.pretrain_epochs is not None:
        base = replace(base, max_epochs=args.pretrain_epochs)
    P = load_data(cfg)
    shift = pretrain_shift(P, base)
    print("pretrained shift model on", P.grid)

    Q = two_bump_field(P.grid, slopes=tuple(args.slopes))
    warm, cold = [], []
    for seed in args.seeds:
        tcfg = replace(base, seed=seed, max_epochs=args.budget)
        warm.append(epochs_to_target(Q, tcfg, TARGET, shift=shift))
        cold.append(epochs_to_target(Q, tcfg, TARGET))
        print(f"seed {seed}: warm {warm[-1]}  random {cold[-1]}", flush=True)

    def median(v):
        # runs that never reach the target count as budget + 1 (a lower bound)
        return float(np.median([args.budget + 1 if e is None else e for e in v]))

    print(f"median epochs to E_rec <= {TARGET}: warm {median(warm):g}  random {median(cold):g}")


if __name__ == "__main__":
    main()
