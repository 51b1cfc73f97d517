"""Command-line entry point.

    bahash synth  --dims 32 --n 2000 --clusters 10 --out X.bhf
    bahash train  --method ba --bits 16 --init itq --zstep group:1 --in X.bhf --out model.bhm
    bahash encode --model model.bhm --in X.bhf --out X.bhc
    bahash eval   --base base.bhc --query query.bhc --base-features B.bhf \\
                  --query-features Q.bhf --K 50 --k 50 --radius 2 --entropy --out-dir results/
    bahash bench  zstep|parallel

Every command accepts ``--config FILE`` (flat ``key=value`` lines using the
long option names); explicit flags override the file.  Exit codes: 1 usage,
2 data/I-O, 3 numeric failure.  ``$BAHASH_WORKERS`` sets the default pool size.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import time
from pathlib import Path

import numpy as np

from bahash import zstep as zs
from bahash._pool import resolve_workers
from bahash.autoencoder import (
    SvmConfig,
    encode,
    encode_bits,
    f_step,
    h_step,
    load_model,
    save_model,
)
from bahash.baselines import fit_itq, fit_pca, refit_decoder
from bahash.data import (
    DataError,
    FeatureMatrix,
    apply_normalization,
    load_codes,
    load_features,
    normalize,
    save_codes,
    save_features,
)
from bahash.metrics import (
    GroundTruth,
    build_ground_truth,
    code_entropy,
    code_histogram,
    pr_curve,
    precision_recall,
    retrieve_all,
    write_csv,
    write_entropy_table,
    write_histogram,
    write_pr_curve,
    write_precision_table,
)
from bahash.synth import gaussian_blobs
from bahash.trainer import PenaltySchedule, TrainConfig, init_codes, train

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

log = logging.getLogger("bahash")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config(path) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment; dashes in keys map to underscores."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def write_resolved_config(path, args) -> None:
    skip = {"func", "config", "verbose"}
    lines = [f"{k}={v}" for k, v in sorted(vars(args).items()) if k not in skip and v is not None]
    Path(path).write_text("\n".join(lines) + "\n")


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix else p


# -- synth -----------------------------------------------------------------------

def cmd_synth(args) -> None:
    X = gaussian_blobs(args.dims, args.n, args.clusters, seed=args.seed, spread=args.spread)
    save_features(args.out, X, args.format)
    write_resolved_config(f"{_stem(args.out)}.config", args)


# -- train -----------------------------------------------------------------------

def cmd_train(args) -> None:
    X_raw = load_features(args.input, args.format)
    X = normalize(X_raw) if args.normalize else X_raw
    L = args.bits
    method = args.method.lower()
    stem = _stem(args.out)
    codes_path = args.codes or f"{stem}.bhc"
    report_path = args.report or f"{stem}_report.csv"

    if method in ("itq", "tpca"):
        if method == "itq":
            h = fit_itq(X, L, iters=args.itq_iters, seed=args.seed).encoder()
        else:
            h = fit_pca(X, L).encoder()
        codes = encode(h, X)
        f, err = refit_decoder(codes, X)
        log.info("%s baseline: reconstruction error %.6g", method, err)
    else:
        init = args.init or ("tpca" if method == "bfa" else "itq")
        Z0 = init_codes(X, L, init, seed=args.seed)
        cfg = TrainConfig(
            mode=method.upper(), bits=L, zstep=args.zstep,
            svm=SvmConfig(C=args.svm_C, tol=args.svm_tol, max_passes=args.svm_max_passes),
            schedule=PenaltySchedule(args.mu1, args.growth, args.max_iters),
            validation=args.validation, val_K=args.val_K, val_k=args.val_k,
            seed=args.seed, workers=args.workers)
        result = train(X, Z0, cfg)
        h, f = result.encoder, result.decoder
        result.report.write_csv(report_path)
        # Z = h(X) over every input point, validation points included
        codes = encode(h, X)
        log.info("stop reason %s after %d iterations", result.report.stop_reason,
                 len(result.report.records))
    save_model(args.out, h, f, X.normalization)
    save_codes(codes_path, codes)
    write_resolved_config(f"{stem}.config", args)


# -- encode ----------------------------------------------------------------------

def cmd_encode(args) -> None:
    h, _, norm = load_model(args.model)
    X = load_features(args.input, args.format)
    if X.dims != h.W.shape[1]:
        raise DataError(f"model expects D={h.W.shape[1]}, features have D={X.dims}")
    codes = encode(h, apply_normalization(X, norm))
    save_codes(args.out, codes)


# -- eval ------------------------------------------------------------------------

def _load_ground_truth(path) -> GroundTruth:
    rows = [[int(t) for t in line.split(",")] for line in Path(path).read_text().splitlines()
            if line.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: ground truth rows must be non-empty and equal length")
    return GroundTruth(len(rows[0]), np.array(rows, dtype=np.int64))


def cmd_eval(args) -> None:
    base = load_codes(args.base)
    query = load_codes(args.query)
    if base.bits != query.bits:
        raise DataError(f"base codes have L={base.bits}, query codes L={query.bits}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    L = base.bits

    if args.ground_truth:
        gt = _load_ground_truth(args.ground_truth)
    elif args.base_features and args.query_features:
        Xb = load_features(args.base_features)
        Xq = load_features(args.query_features)
        if Xb.count != base.count or Xq.count != query.count:
            raise DataError("feature files and code files disagree on N")
        gt = build_ground_truth(Xq, Xb, args.K)
        if args.save_ground_truth:
            np.savetxt(args.save_ground_truth, gt.neighbors, fmt="%d", delimiter=",")
    else:
        gt = None
    if gt is not None and gt.queries != query.count:
        raise DataError(f"ground truth has {gt.queries} queries, query codes have {query.count}")

    if gt is not None:
        rows = []
        pk, rk, _ = precision_recall(gt, retrieve_all(base, query, k=args.k))
        for r in args.radius or [None]:
            row = {"L": L, "K": gt.K, "k": args.k, "precision_knn": pk, "recall_knn": rk,
                   "queries": gt.queries}
            if r is not None:
                pr, rr, _ = precision_recall(gt, retrieve_all(base, query, radius=r),
                                             empty="zero")
                row.update(radius=r, precision_radius=pr, recall_radius=rr)
            rows.append(row)
        write_precision_table(out / "precision.csv", rows)
        r_max = L if args.r_max is None else args.r_max
        write_pr_curve(out / "pr_curve.csv", L, pr_curve(gt, base, query, r_max))
    if args.entropy:
        hb, hq = code_histogram(base), code_histogram(query)
        write_entropy_table(out / "entropy.csv", [(L, "base", base.count, code_entropy(hb)),
                                                  (L, "query", query.count, code_entropy(hq))])
        write_histogram(out / "histogram_base.csv", hb)
        write_histogram(out / "histogram_query.csv", hq)
    write_resolved_config(out / "eval.config", args)


# -- bench -----------------------------------------------------------------------

def _bench_problem(dims, n, L, seed, workers):
    X = normalize(gaussian_blobs(dims, n, 10, seed=seed))
    Z = init_codes(X, L, "itq", seed=seed)
    h = h_step(X, Z, workers=workers)
    f = f_step(Z, X)
    return X, Z, h, f


def bench_zstep(args, out) -> None:
    workers = resolve_workers(args.workers)
    X, _, h, f = _bench_problem(args.dims, args.n, args.bits, args.seed, workers)
    R, Y = zs.qr_reduce_batch(f.A, f.b, X.values)
    anchors = encode_bits(h, X)
    rows, summary = [], []
    zs.zstep_exact_batch(R[:, :], Y[:, :2], 1.0, anchors[:, :2])  # compile outside the timer
    for mu in args.mus:
        t0 = time.perf_counter()
        res = zs.zstep_exact_batch(R, Y, mu, anchors, workers=workers)
        secs = time.perf_counter() - t0
        agree = np.ones(Y.shape[1], dtype=bool)
        if args.bits <= args.oracle_max_bits:
            Zo, eo = zs.brute_force_batch(R, Y, mu, anchors)
            agree = np.abs(res.objective - eo) <= 1e-9 * (1.0 + np.abs(eo))
        st = res.stats
        early = st["certified"] | st["anchor_bound"]
        for n in range(Y.shape[1]):
            rows.append([mu, n, int(st["radius"][n]), int(st["evaluated"][n]),
                         int(st["aborted"][n]), bool(st["certified"][n]),
                         bool(st["anchor_bound"][n]), float(res.objective[n]), bool(agree[n])])
        summary.append([mu, Y.shape[1], float(np.mean(st["certified"])),
                        float(np.mean(early)), float(np.mean(st["radius"])), float(np.mean(agree)) * 100.0,
                        Y.shape[1] / secs])
    write_csv(out, ["mu", "point", "radius", "evaluated", "aborted", "certified",
                    "anchor_bound", "objective", "oracle_agree"], rows)
    header = ["mu", "points", "certified_fraction", "early_stop_fraction", "mean_radius",
              "oracle_agreement_pct",
              "points_per_second"]
    if args.summary:
        write_csv(args.summary, header, summary)
    for s in summary:
        print("mu=%-8g certified=%.3f early=%.3f radius=%.2f oracle=%.1f%% %.0f pts/s"
              % (s[0], s[2], s[3], s[4], s[5], s[6]), file=sys.stderr)


def model_hash(h, f, codes) -> str:
    m = hashlib.sha256()
    for a in (h.W, h.w0, f.A, f.b, codes.words):
        m.update(np.ascontiguousarray(a).tobytes())
    return m.hexdigest()[:16]


def bench_parallel(args, out) -> None:
    X = normalize(gaussian_blobs(args.dims, args.n, 10, seed=args.seed))
    Z0 = init_codes(X, args.bits, "itq", seed=args.seed)
    f = f_step(Z0, X)
    R, Y = zs.qr_reduce_batch(f.A, f.b, X.values)
    anchors = encode_bits(h_step(X, Z0, workers=1), X)
    rows, hashes, base_time = [], set(), None
    zs.zstep_exact_batch(R, Y[:, :2], args.mu, anchors[:, :2])  # compile outside the timer
    zs.zstep_inexact_batch(R, Y[:, :2], args.mu, anchors[:, :2], warm=Z0.unpack()[:, :2])
    for w in args.workers_list:
        t0 = time.perf_counter()
        zres = zs.zstep_inexact_batch(R, Y, args.mu, anchors, warm=Z0.unpack(), g=1,
                                      workers=w) if args.bits > 16 else \
            zs.zstep_exact_batch(R, Y, args.mu, anchors, workers=w)
        z_secs = time.perf_counter() - t0
        t0 = time.perf_counter()
        cfg = TrainConfig(bits=args.bits, zstep=args.zstep, validation=0.0,
                          schedule=PenaltySchedule(max_iters=args.max_iters),
                          seed=args.seed, workers=w)
        res = train(X, Z0, cfg)
        t_secs = time.perf_counter() - t0
        digest = model_hash(res.encoder, res.decoder, res.codes)
        digest += hashlib.sha256(zres.Z.tobytes()).hexdigest()[:8]
        hashes.add(digest)
        base_time = base_time or z_secs
        rows.append([w, t_secs, z_secs, base_time / z_secs, digest])
        print(f"workers={w} train={t_secs:.2f}s zstep={z_secs:.2f}s "
              f"speedup={base_time / z_secs:.2f} hash={digest}", file=sys.stderr)
    write_csv(out, ["workers", "train_seconds", "zstep_seconds", "zstep_speedup", "hash"], rows)
    if len(hashes) != 1:
        raise ArithmeticError("outputs differ across worker counts")


def cmd_bench(args) -> None:
    if args.out:
        with open(args.out, "w", newline="") as fh:
            _run_bench(args, fh)
    else:
        _run_bench(args, sys.stdout)


def _run_bench(args, out) -> None:
    if args.suite == "zstep":
        bench_zstep(args, out)
    else:
        bench_parallel(args, out)


# -- parser ----------------------------------------------------------------------

def _int_list(s):
    return [int(t) for t in str(s).split(",") if t]


def _float_list(s):
    return [float(t) for t in str(s).split(",") if t]


def _zstep(s):
    try:
        TrainConfig(zstep=s)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))
    return s


def _bool(s):
    if isinstance(s, bool):
        return s
    return str(s).lower() in ("1", "true", "yes", "on")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bahash", description="Binary autoencoder hashing")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key=value file; flags override it")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("synth", help="write a seeded Gaussian-blob dataset")
    common(s)
    s.add_argument("--dims", type=int, default=32)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--clusters", type=int, default=10)
    s.add_argument("--spread", type=float, default=1.0)
    s.add_argument("--format", choices=["csv", "raw-f32"], default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train BA/BFA or fit an ITQ/tPCA baseline")
    common(t)
    t.add_argument("--method", choices=["ba", "bfa", "itq", "tpca"], default="ba")
    t.add_argument("--bits", type=int, default=16)
    t.add_argument("--init", choices=["itq", "tpca", "random"], default=None)
    t.add_argument("--zstep", type=_zstep, default="exact", help="'exact' or 'group:g'")
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--format", choices=["csv", "raw-f32"], default=None)
    t.add_argument("--out", required=True, help="model file")
    t.add_argument("--codes", default=None, help="codes file (default <out>.bhc)")
    t.add_argument("--report", default=None, help="report CSV (default <out>_report.csv)")
    t.add_argument("--mu1", type=float, default=0.01)
    t.add_argument("--growth", type=float, default=2.0)
    t.add_argument("--max-iters", type=int, default=30)
    t.add_argument("--validation", type=float, default=0.1)
    t.add_argument("--val-K", type=int, default=50)
    t.add_argument("--val-k", type=int, default=50)
    t.add_argument("--svm-C", type=float, default=100.0)
    t.add_argument("--svm-tol", type=float, default=1e-3)
    t.add_argument("--svm-max-passes", type=int, default=1000)
    t.add_argument("--itq-iters", type=int, default=50)
    t.add_argument("--normalize", type=_bool, default=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="hash a feature file with a trained model")
    common(e)
    e.add_argument("--model", required=True)
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--format", choices=["csv", "raw-f32"], default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    v = sub.add_parser("eval", help="precision/recall and entropy of codes")
    common(v)
    v.add_argument("--base", required=True)
    v.add_argument("--query", required=True)
    v.add_argument("--base-features")
    v.add_argument("--query-features")
    v.add_argument("--ground-truth", help="CSV, one row of K base indices per query")
    v.add_argument("--save-ground-truth")
    v.add_argument("--K", type=int, default=50)
    v.add_argument("--k", type=int, default=50)
    v.add_argument("--radius", type=int, action="append")
    v.add_argument("--r-max", type=int, default=None)
    v.add_argument("--entropy", action="store_true")
    v.add_argument("--out-dir", default=".")
    v.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="Z-step oracle/throughput or parallel scaling")
    common(b)
    b.add_argument("suite", choices=["zstep", "parallel"])
    b.add_argument("--bits", type=int, default=10)
    b.add_argument("--dims", type=int, default=32)
    b.add_argument("--n", type=int, default=2000)
    b.add_argument("--mus", type=_float_list, default=[0.01, 0.04, 0.16, 0.64, 2.56, 10.24])
    b.add_argument("--mu", type=float, default=0.01)
    b.add_argument("--oracle-max-bits", type=int, default=12)
    b.add_argument("--workers-list", type=_int_list, default=[1, 2, 4])
    b.add_argument("--zstep", type=_zstep, default="group:1")
    b.add_argument("--max-iters", type=int, default=5)
    b.add_argument("--summary", default=None)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return p


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            conf = read_config(args.config)
        except OSError as exc:
            raise DataError(f"cannot read config: {exc}")
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        unknown = set(conf) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        sp.set_defaults(**conf)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"bahash: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"bahash: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"bahash: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"bahash: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"bahash: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"bahash: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
