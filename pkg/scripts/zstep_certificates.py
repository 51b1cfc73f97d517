"""How often the Z-step search stops early, as a function of mu.

    python scripts/zstep_certificates.py --bits 16 --n 5000

For a decoder/encoder fitted to blob data, reports per mu the fraction of
points returning the anchor, the fraction whose optimum was certified, the
fraction settled at the anchor by the bound or a certificate, the
mean Hamming radius searched, codes evaluated per point and throughput.
"""

import argparse
import sys
import time

import numpy as np

from bahash import zstep as zs
from bahash.autoencoder import encode_bits, f_step, h_step
from bahash.data import normalize
from bahash.metrics import write_csv
from bahash.synth import gaussian_blobs
from bahash.trainer import init_codes


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bits", type=int, default=16)
    ap.add_argument("--dims", type=int, default=32)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    X = normalize(gaussian_blobs(args.dims, args.n, clusters=10, seed=args.seed))
    Z = init_codes(X, args.bits, "itq", seed=args.seed)
    h, f = h_step(X, Z, workers=args.workers), f_step(Z, X)
    R, Y = zs.qr_reduce_batch(f.A, f.b, X.values)
    anchors = encode_bits(h, X)
    zs.zstep_exact_batch(R, Y[:, :2], 1.0, anchors[:, :2])

    rows = []
    for mu in 0.01 * 2.0 ** np.arange(12):
        t0 = time.perf_counter()
        res = zs.zstep_exact_batch(R, Y, mu, anchors, workers=args.workers)
        secs = time.perf_counter() - t0
        st = res.stats
        rows.append([mu, float(np.mean(np.all(res.Z == anchors, axis=0))),
                     float(np.mean(st["certified"])),
                     float(np.mean(st["certified"] | st["anchor_bound"])),
                     float(np.mean(st["radius"])),
                     float(np.mean(st["evaluated"])), args.n / secs])
        print("mu=%-8.4g anchor=%.3f certified=%.3f early=%.3f radius=%.2f evaluated=%.1f"
              % tuple(rows[-1][:6]), file=sys.stderr)
    header = ["mu", "anchor_fraction", "certified_fraction", "early_stop_fraction", "mean_radius",
              "mean_evaluated", "points_per_second"]
    write_csv(args.out or sys.stdout, header, rows)


if __name__ == "__main__":
    main()
