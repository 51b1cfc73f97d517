"""Outer loop: alternate (h, f) fits and Z-steps over an increasing penalty.

Each outer iteration at penalty ``mu`` runs

1. h-step: one SVM per bit fitting ``h`` to the current codes ``Z``;
2. f-step: least-squares decoder from ``Z`` to ``X``;
3. Z-step: every code re-optimized against ``(h, f)`` at this ``mu``;

and stops when the Z-step returns ``Z = h(X)`` (no later step can change
anything), when validation precision drops below the best seen, or after
the last scheduled ``mu``.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from bahash.autoencoder import (
    LinearDecoder,
    LinearEncoder,
    SvmConfig,
    encode_bits,
    f_step,
    h_step,
)
from bahash.baselines import fit_itq, fit_pca, itq_encode, tpca_encode
from bahash.data import (
    BinaryCodeMatrix,
    DataError,
    FeatureMatrix,
    as_bits,
    as_values,
    pack_codes,
    split_dataset,
)
from bahash.metrics import build_ground_truth, precision_recall
from bahash.zstep import qr_reduce_batch, zstep_exact_batch, zstep_inexact_batch

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["iteration", "mu", "svm_C", "e_q_before_z", "e_q", "e_ba",
                  "violation", "val_precision", "codes_changed", "seconds"]


@dataclass(frozen=True)
class PenaltySchedule:
    mu1: float = 0.01
    growth: float = 2.0
    max_iters: int = 30

    def __post_init__(self):
        if not self.mu1 > 0 or not self.growth > 1 or self.max_iters < 1:
            raise ValueError("schedule needs mu1 > 0, growth > 1, max_iters >= 1")

    def values(self, constant: bool = False) -> list[float]:
        if constant:
            return [self.mu1] * self.max_iters
        return [self.mu1 * self.growth ** k for k in range(self.max_iters)]


@dataclass(frozen=True)
class TrainConfig:
    """``zstep`` is ``"exact"`` or ``"group:g"``.  ``validation=0`` disables
    validation early stopping and trains on every point."""

    mode: str = "BA"
    bits: int = 16
    zstep: str = "exact"
    svm: SvmConfig = field(default_factory=SvmConfig)
    schedule: PenaltySchedule = field(default_factory=PenaltySchedule)
    validation: float = 0.1
    val_K: int = 50
    val_k: int = 50
    svm_C_max: float = 1e4
    seed: int = 0
    workers: int | None = None

    def __post_init__(self):
        if self.mode not in ("BA", "BFA"):
            raise ValueError(f"mode must be BA or BFA, got {self.mode!r}")
        if not 0 <= self.validation < 1:
            raise ValueError("validation fraction must be in [0, 1)")
        self.group_size  # validates the zstep string

    @property
    def group_size(self) -> int | None:
        if self.zstep == "exact":
            return None
        kind, _, g = self.zstep.partition(":")
        if kind != "group" or not g.isdigit() or int(g) < 1:
            raise ValueError(f"zstep must be 'exact' or 'group:g', got {self.zstep!r}")
        return int(g)


@dataclass
class IterationRecord:
    iteration: int
    mu: float
    svm_C: float
    e_q_before_z: float
    e_q: float
    e_ba: float
    violation: float
    val_precision: float
    codes_changed: int
    seconds: float

    def row(self):
        return [getattr(self, c) for c in REPORT_COLUMNS]


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    stop_reason: str = "max-iters"
    initial_val_precision: float = float("nan")
    best_iteration: int = 0

    def write_csv(self, path) -> None:
        from bahash.metrics import write_csv
        write_csv(path, REPORT_COLUMNS + ["stop_reason"],
                  [r.row() + [self.stop_reason] for r in self.records])


@dataclass
class TrainResult:
    encoder: LinearEncoder
    decoder: LinearDecoder
    codes: BinaryCodeMatrix          # h(X) on the training points
    aux_codes: BinaryCodeMatrix      # last auxiliary codes Z
    report: TrainReport
    train_idx: np.ndarray
    val_idx: np.ndarray


def evaluate_penalty(h: LinearEncoder, f: LinearDecoder, Z, X, mu: float):
    """``(E_Q, E_BA, violation)`` with ``E_Q = sum ||x - f(z)||^2 + mu * violation``.

    ``violation = sum_n ||z_n - h(x_n)||^2`` and ``E_BA`` is the
    reconstruction error of ``f(h(x))``.
    """
    Xv = as_values(X)
    Zb = as_bits(Z).astype(np.float64)
    Hb = encode_bits(h, Xv).astype(np.float64)
    recon = float(((Xv - f.A @ Zb - f.b[:, None]) ** 2).sum())
    violation = float(((Zb - Hb) ** 2).sum())
    e_ba = float(((Xv - f.A @ Hb - f.b[:, None]) ** 2).sum())
    return recon + mu * violation, e_ba, violation


def init_codes(X, L: int, method: str = "itq", seed: int = 0) -> BinaryCodeMatrix:
    """Initial codes from ITQ, thresholded PCA, or i.i.d. fair coin flips."""
    if method == "itq":
        return itq_encode(fit_itq(X, L, seed=seed), X)
    if method == "tpca":
        return tpca_encode(fit_pca(X, L), X)
    if method == "random":
        N = as_values(X).shape[1]
        return pack_codes(np.random.default_rng(seed).integers(0, 2, (L, N), dtype=np.uint8))
    raise ValueError(f"unknown init method {method!r}")


class _Validator:
    def __init__(self, X_train, X_val, K, k):
        self.X_train, self.X_val, self.k = X_train, X_val, k
        K = min(K, X_train.shape[1] - 1)
        self.gt = build_ground_truth(X_val, X_train, K)

    def precision(self, h: LinearEncoder) -> float:
        base = pack_codes(encode_bits(h, self.X_train))
        query = pack_codes(encode_bits(h, self.X_val))
        d = np.bitwise_count(base.words[None, :] ^ query.words[:, None])
        got = [np.argsort(row, kind="stable")[:self.k] for row in d]
        return precision_recall(self.gt, got)[0]


def _looks_normalized(Xv) -> bool:
    mean_ok = np.abs(Xv.mean(axis=1)).max() <= 1e-6 * max(1.0, np.abs(Xv).max())
    rng = (Xv.max(axis=1) - Xv.min(axis=1)).max()
    return bool(mean_ok and abs(rng - 1.0) <= 1e-6)


def train(X, Z0, cfg: TrainConfig | None = None) -> TrainResult:
    """Train a binary autoencoder (or BFA) from initial codes ``Z0``."""
    cfg = cfg or TrainConfig()
    Xv = as_values(X)
    Zb = as_bits(Z0)
    D, N = Xv.shape
    if Zb.shape != (cfg.bits, N):
        raise DataError(f"initial codes have shape {Zb.shape}, expected ({cfg.bits}, {N})")
    if not _looks_normalized(Xv):
        warnings.warn("features do not look normalized (zero mean, max range 1); "
                      "the default mu schedule assumes they are", stacklevel=2)

    if cfg.validation > 0:
        split = split_dataset(N, validation=cfg.validation, seed=cfg.seed)
        tr, va = split.train, split.validation
    else:
        tr, va = np.arange(N), np.arange(0)
    Xt = np.asfortranarray(Xv[:, tr])
    Z = np.ascontiguousarray(Zb[:, tr])
    validator = _Validator(Xt, Xv[:, va], cfg.val_K, cfg.val_k) if va.size else None

    g = cfg.group_size
    mus = cfg.schedule.values(constant=cfg.mode == "BFA")
    report = TrainReport()
    h = None
    relaxed = None
    best = None  # (precision, h, f, Z, iteration)
    stop = "max-iters"

    for it, mu in enumerate(mus, start=1):
        t0 = time.perf_counter()
        C = min(cfg.svm.C * 2.0 ** (it - 1), max(cfg.svm_C_max, cfg.svm.C))
        svm = SvmConfig(C, cfg.svm.tol, cfg.svm.max_passes)
        h = h_step(Xt, Z, svm, warm=h, workers=cfg.workers)
        f = f_step(Z, Xt)

        val_p = float("nan")
        if validator is not None:
            val_p = validator.precision(h)
            if best is None:
                report.initial_val_precision = val_p
            if best is None or val_p > best[0]:
                best = (val_p, h, f, Z.copy(), it)
            elif val_p < best[0]:
                stop = "validation-drop"
                report.records.append(IterationRecord(it, mu, C, np.nan, np.nan, np.nan,
                                                      np.nan, val_p, 0,
                                                      time.perf_counter() - t0))
                log.info("iter %d mu=%g: validation precision %.3f < best %.3f, stopping",
                         it, mu, val_p, best[0])
                break

        anchors = encode_bits(h, Xt)
        e_q_before, _, _ = evaluate_penalty(h, f, Z, Xt, mu)
        R, Y = qr_reduce_batch(f.A, f.b, Xt)
        if g is None:
            res = zstep_exact_batch(R, Y, mu, anchors, warm=Z, workers=cfg.workers)
        else:
            res = zstep_inexact_batch(R, Y, mu, anchors, warm=Z, g=g, relaxed=relaxed,
                                      workers=cfg.workers)
            relaxed = res.relaxed
        changed = int(np.any(res.Z != Z, axis=0).sum())
        Z = res.Z
        e_q, e_ba, violation = evaluate_penalty(h, f, Z, Xt, mu)
        report.records.append(IterationRecord(it, mu, C, e_q_before, e_q, e_ba, violation,
                                              val_p, changed, time.perf_counter() - t0))
        log.info("iter %d mu=%g E_Q %.6g -> %.6g, E_BA %.6g, changed %d",
                 it, mu, e_q_before, e_q, e_ba, changed)

        if cfg.mode == "BA" and np.array_equal(Z, anchors):
            stop = "codes-fixed"
            break
        if cfg.mode == "BFA" and changed == 0:
            stop = "codes-fixed"
            break

    if stop != "codes-fixed" and best is not None:
        _, h, f, Z, report.best_iteration = best
    elif cfg.mode == "BFA":
        # h fitted to the final free codes
        h = h_step(Xt, Z, svm, warm=h, workers=cfg.workers)
    report.stop_reason = stop
    if best is not None and stop == "codes-fixed":
        report.best_iteration = len(report.records)

    codes = encode_bits(h, Xt)
    f = f_step(codes, Xt)
    return TrainResult(h, f, pack_codes(codes), pack_codes(Z), report, tr, va)
