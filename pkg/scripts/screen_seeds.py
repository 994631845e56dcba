"""Short training runs over a range of seeds, ranked by final training loss.

Ranking uses only the training objective, never the known shifts, so the
output can be used to choose which seeds to bundle for a longer sweep.

    python3 scripts/screen_seeds.py --first 0 --count 40 --epochs 3000
"""
import argparse
import csv
import sys
from dataclasses import replace

from nspod.config import load_config
from nspod.experiments import load_data, run_training


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="crossing-waves-desk")
    ap.add_argument("--first", type=int, default=0)
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=3000)
    ap.add_argument("--csv", default=None, help="also write the ranking here")
    args = ap.parse_args()

    cfg = load_config(args.config)
    Q = load_data(cfg)
    rows = []
    for seed in range(args.first, args.first + args.count):
        tcfg = replace(cfg.training, seed=seed, max_epochs=args.epochs)
        run = run_training(Q, tcfg)
        rows.append(dict(seed=seed, loss=run.trace.history[-1].total, best_loss=run.trace.best_loss,
                         e_rec=run.result.e_rec, ranks=" ".join(map(str, run.result.ranks))))
        print(f"seed {seed:4d}  loss {rows[-1]['loss']:.4e}  E_rec {rows[-1]['e_rec']:.3e}  "
              f"ranks ({rows[-1]['ranks']})", flush=True)
    rows.sort(key=lambda r: r["best_loss"])
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    w = csv.DictWriter(out, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    if args.csv:
        out.close()


if __name__ == "__main__":
    main()
