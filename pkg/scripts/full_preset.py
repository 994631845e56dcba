"""Full-resolution crossing-waves run with the published settings
(400 x 200 grid, up to 10^6 epochs). Expect days on a CPU; checkpoints are
written every 10^4 epochs.

    python3 scripts/full_preset.py --out runs/full [--max-epochs N]
"""
import argparse
import sys

from nspod import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/crossing-waves-full")
    ap.add_argument("--max-epochs", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    argv = ["-v", "train", "--config", "crossing-waves-full", "--out", args.out, "--checkpoints"]
    if args.max_epochs is not None:
        argv += ["--max-epochs", str(args.max_epochs)]
    if args.threads is not None:
        argv += ["--threads", str(args.threads)]
    code = cli.main(argv)
    if code != 0:
        return code
    return cli.main(["refine", f"{args.out}/result.nspod", "--config", "crossing-waves-full", "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
