"""One BA training run with validation early stopping; prints the per-iteration report.

    python scripts/penalty_path.py --bits 16 --zstep group:1 --report path.csv
"""

import argparse
import logging
import sys

from bahash.data import normalize
from bahash.synth import gaussian_blobs
from bahash.trainer import TrainConfig, init_codes, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bits", type=int, default=16)
    ap.add_argument("--dims", type=int, default=32)
    ap.add_argument("--n", type=int, default=3000)
    ap.add_argument("--zstep", default="exact")
    ap.add_argument("--init", default="itq")
    ap.add_argument("--validation", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--report", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")

    X = normalize(gaussian_blobs(args.dims, args.n, clusters=10, seed=args.seed))
    Z0 = init_codes(X, args.bits, args.init, seed=args.seed)
    res = train(X, Z0, TrainConfig(bits=args.bits, zstep=args.zstep,
                                   validation=args.validation, seed=args.seed))
    r = res.report
    print(f"stop: {r.stop_reason} after {len(r.records)} iterations; "
          f"validation precision {r.initial_val_precision:.2f} -> best at iteration "
          f"{r.best_iteration}", file=sys.stderr)
    if args.report:
        r.write_csv(args.report)
    else:
        r.write_csv(sys.stdout)


if __name__ == "__main__":
    main()
