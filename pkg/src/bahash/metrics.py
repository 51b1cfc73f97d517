"""Retrieval precision/recall and code-utilization entropy."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from bahash.data import BinaryCodeMatrix, DataError, as_values


@dataclass(frozen=True)
class GroundTruth:
    K: int
    neighbors: np.ndarray  # (M, K) base indices, nearest first

    @property
    def queries(self) -> int:
        return self.neighbors.shape[0]


@dataclass(frozen=True)
class CodeHistogram:
    bits: int
    count: int
    counts: dict  # code value -> number of points

    def sorted_counts(self) -> list[tuple[int, int]]:
        """(code, count) pairs by decreasing count, then increasing code."""
        return sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))


def build_ground_truth(queries, base, K: int, block: int = 256) -> GroundTruth:
    """Exact ``K`` nearest base points (squared Euclidean) for every query.

    Distances are summed from explicit differences, not expanded dot
    products, so equal distances stay equal; ties go to the lower index.
    """
    Q = as_values(queries)
    B = as_values(base)
    if Q.shape[0] != B.shape[0]:
        raise DataError(f"query D={Q.shape[0]} differs from base D={B.shape[0]}")
    N = B.shape[1]
    if not 1 <= K < N:
        raise DataError(f"need 1 <= K < N_base, got K={K}, N_base={N}")
    Bt = np.ascontiguousarray(B.T)
    out = np.empty((Q.shape[1], K), dtype=np.int64)
    for m in range(Q.shape[1]):
        d = ((Bt - Q[:, m]) ** 2).sum(axis=1)
        out[m] = np.argsort(d, kind="stable")[:K]
    return GroundTruth(K, out)


def hamming_distances(base: BinaryCodeMatrix, query_word) -> np.ndarray:
    """Distances from one packed query code to every base code (XOR + popcount)."""
    return np.bitwise_count(base.words ^ np.uint64(query_word)).astype(np.int64)


def retrieve(base: BinaryCodeMatrix, query_word, k: int | None = None,
             radius: int | None = None) -> np.ndarray:
    """Indices of the ``k`` Hamming-nearest base codes, or all within ``radius``.

    Exactly one of ``k`` and ``radius`` must be given.  k-NN ties go to the
    lower base index; radius results are in ascending index order.
    """
    if (k is None) == (radius is None):
        raise ValueError("give exactly one of k or radius")
    d = hamming_distances(base, query_word)
    if k is not None:
        return np.argsort(d, kind="stable")[:k]
    return np.flatnonzero(d <= radius)


def retrieve_all(base: BinaryCodeMatrix, queries: BinaryCodeMatrix, k=None, radius=None):
    if base.bits != queries.bits:
        raise DataError(f"base codes have L={base.bits}, query codes L={queries.bits}")
    return [retrieve(base, w, k=k, radius=radius) for w in queries.words]


def precision_recall(gt: GroundTruth, retrieved, empty: str = "zero"):
    """Mean precision and recall in percent.

    ``empty="zero"`` scores a query with nothing retrieved as precision 0
    (precision tables); ``empty="skip"`` leaves such queries out of both
    averages (precision/recall curves).  Returns ``(precision, recall,
    queries_used)``.
    """
    if len(retrieved) != gt.queries:
        raise DataError(f"{len(retrieved)} retrieved lists for {gt.queries} queries")
    prec, rec = [], []
    for truth, got in zip(gt.neighbors, retrieved):
        got = np.asarray(got)
        if got.size == 0:
            if empty == "skip":
                continue
            prec.append(0.0)
            rec.append(0.0)
            continue
        hits = np.intersect1d(truth, got).size
        prec.append(hits / got.size)
        rec.append(hits / gt.K)
    if not prec:
        return 0.0, 0.0, 0
    return 100.0 * float(np.mean(prec)), 100.0 * float(np.mean(rec)), len(prec)


def pr_curve(gt: GroundTruth, base: BinaryCodeMatrix, queries: BinaryCodeMatrix,
             r_max: int | None = None, empty: str = "skip"):
    """One ``(radius, precision, recall, queries_used)`` point per radius 0..r_max."""
    r_max = base.bits if r_max is None else r_max
    dists = [hamming_distances(base, w) for w in queries.words]
    points = []
    for r in range(r_max + 1):
        got = [np.flatnonzero(d <= r) for d in dists]
        p, rc, used = precision_recall(gt, got, empty=empty)
        points.append((r, p, rc, used))
    return points


def code_histogram(codes: BinaryCodeMatrix) -> CodeHistogram:
    values, counts = np.unique(codes.words, return_counts=True)
    return CodeHistogram(codes.bits, codes.count,
                         {int(v): int(c) for v, c in zip(values, counts)})


def code_entropy(hist: CodeHistogram) -> float:
    """Entropy in bits of the empirical code distribution (effective bits)."""
    c = np.array(list(hist.counts.values()), dtype=np.float64)
    if c.sum() != hist.count:
        raise DataError("histogram counts do not sum to N")
    p = c / hist.count
    S = float(-(p * np.log(p)).sum() / np.log(2.0))
    S = max(S, 0.0)
    bound = min(hist.bits, np.log2(hist.count))
    assert S <= bound + 1e-9, (S, bound)
    return S


# -- CSV exports -----------------------------------------------------------------

PRECISION_COLUMNS = ["L", "K", "k", "radius", "precision_knn", "recall_knn",
                     "precision_radius", "recall_radius", "queries"]


def write_csv(path_or_file, header, rows) -> None:
    """Write rows under a header to a path or an open text file."""
    if hasattr(path_or_file, "write"):
        w = csv.writer(path_or_file)
        w.writerow(header)
        w.writerows(rows)
        return
    with open(path_or_file, "w", newline="") as fh:
        write_csv(fh, header, rows)


def write_precision_table(path, rows) -> None:
    """Rows are dicts keyed by ``PRECISION_COLUMNS`` (one row per L)."""
    write_csv(path, PRECISION_COLUMNS, [[r.get(c, "") for c in PRECISION_COLUMNS] for r in rows])


def write_pr_curve(path, L, points) -> None:
    write_csv(path, ["L", "radius", "precision", "recall", "queries"],
              [[L, r, p, rc, n] for r, p, rc, n in points])


def write_entropy_table(path, rows) -> None:
    """Rows are ``(L, set_name, N, L_eff)``; the bound column is derived."""
    write_csv(path, ["L", "set", "N", "L_eff", "bound"],
              [[L, name, n, s, min(L, float(np.log2(n)))] for L, name, n, s in rows])


def write_histogram(path, hist: CodeHistogram) -> None:
    write_csv(path, ["rank", "code", "count"],
              [[i, code, c] for i, (code, c) in enumerate(hist.sorted_counts())])
