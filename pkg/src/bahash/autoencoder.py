"""Linear encoder/decoder of the binary autoencoder and their fitting steps.

The encoder is ``h(x) = step(W x + w0)`` with ``step(t) = 1`` for ``t >= 0``;
the decoder is ``f(z) = A z + b``.  ``f_step`` fits the decoder by least
squares, ``h_step`` fits one max-margin linear classifier per bit.
"""

from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from bahash._pool import run_parallel
from bahash.data import (
    BinaryCodeMatrix,
    DataError,
    FeatureMatrix,
    Normalization,
    as_bits,
    as_values,
    pack_codes,
)
from bahash.svm import augment, fit_linear_svm, primal_objective

MODEL_MAGIC = "BHM1"
# bias given to a bit whose training labels are all equal
CONSTANT_BIT_BIAS = 1.0


@dataclass(frozen=True)
class LinearDecoder:
    A: np.ndarray  # (D, L)
    b: np.ndarray  # (D,)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise DataError("decoder parameters must be finite")


@dataclass(frozen=True)
class LinearEncoder:
    W: np.ndarray   # (L, D)
    w0: np.ndarray  # (L,)
    # per-bit SVM dual variables, kept only to warm-start the next h-step
    dual: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.w0))):
            raise DataError("encoder parameters must be finite")

    @property
    def bits(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class SvmConfig:
    C: float = 100.0
    tol: float = 1e-3
    max_passes: int = 1000

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("SVM penalty C must be positive")
        if not self.tol > 0 or self.max_passes < 1:
            raise ValueError("SVM tolerance and max passes must be positive")


def f_step(Z, X) -> LinearDecoder:
    """Least-squares decoder ``min_{A,b} sum_n ||x_n - A z_n - b||^2``.

    Solved with a rank-revealing QR of the augmented code matrix ``[Z; 1]``
    so a singular ``Z Z^T`` yields the minimum-norm ``(A, b)``.
    """
    Zb = as_bits(Z)
    Xv = as_values(X)
    L, N = Zb.shape
    if Xv.shape[1] != N:
        raise DataError(f"codes have N={N} but features have N={Xv.shape[1]}")
    if N < L + 1:
        warnings.warn(f"f-step is underdetermined (N={N} < L+1={L + 1}); "
                      "returning the minimum-norm fit", stacklevel=2)
    design = np.ones((N, L + 1))
    design[:, :L] = Zb.T
    coef, *_ = scipy.linalg.lstsq(design, Xv.T, lapack_driver="gelsy")
    return LinearDecoder(np.ascontiguousarray(coef[:L].T), coef[L].copy())


def _fit_bit(Xa, labels, cfg: SvmConfig, alpha0, warm_w, seed):
    y = 2.0 * labels.astype(np.float64) - 1.0
    if np.all(labels == labels[0]):
        w = np.zeros(Xa.shape[1])
        w[-1] = CONSTANT_BIT_BIAS if labels[0] else -CONSTANT_BIT_BIAS
        return w, np.zeros(Xa.shape[0])
    w, alpha, _ = fit_linear_svm(Xa, y, cfg.C, cfg.tol, cfg.max_passes, alpha0, seed)
    if warm_w is not None:
        # a warm start is only ever allowed to help
        if primal_objective(warm_w, Xa, y, cfg.C) < primal_objective(w, Xa, y, cfg.C):
            return warm_w.copy(), alpha
    return w, alpha


def h_step(X, Z, cfg: SvmConfig | None = None, warm: LinearEncoder | None = None,
           workers=None) -> LinearEncoder:
    """Fit one linear SVM per bit, labels ``2 z_l - 1``.

    Bits are independent and trained concurrently; each fit is
    deterministic so the result does not depend on the worker count.
    """
    cfg = cfg or SvmConfig()
    Xv = as_values(X)
    Zb = as_bits(Z)
    L, N = Zb.shape
    if Xv.shape[1] != N:
        raise DataError(f"codes have N={N} but features have N={Xv.shape[1]}")
    Xa = augment(Xv)
    use_warm = warm is not None and warm.bits == L and warm.W.shape[1] == Xv.shape[0]
    use_dual = use_warm and warm.dual is not None and warm.dual.shape == (L, N)

    def fit(l):
        alpha0 = warm.dual[l] if use_dual else None
        warm_w = np.append(warm.W[l], warm.w0[l]) if use_warm else None
        # seed from the labels themselves, so permuting bits permutes the fits
        seed = zlib.crc32(np.packbits(Zb[l]).tobytes())
        return _fit_bit(Xa, Zb[l], cfg, alpha0, warm_w, seed=seed)

    results = run_parallel(fit, range(L), workers)
    Wa = np.array([w for w, _ in results])
    dual = np.array([a for _, a in results])
    return LinearEncoder(Wa[:, :-1].copy(), Wa[:, -1].copy(), dual)


def encode_bits(h: LinearEncoder, X) -> np.ndarray:
    """``(L, N)`` uint8 codes ``step(W x + w0)`` with ``step(0) = 1``."""
    Xv = as_values(X)
    if Xv.shape[0] != h.W.shape[1]:
        raise DataError(f"encoder expects D={h.W.shape[1]}, data has D={Xv.shape[0]}")
    return (h.W @ Xv + h.w0[:, None] >= 0.0).astype(np.uint8)


def encode(h: LinearEncoder, X) -> BinaryCodeMatrix:
    return pack_codes(encode_bits(h, X))


def decode(f: LinearDecoder, Z) -> np.ndarray:
    """Reconstructions ``A z + b`` as a ``(D, N)`` array.

    Each distinct code is decoded once by summing the selected columns of
    ``A``; points then gather their code's reconstruction.
    """
    codes = Z if isinstance(Z, BinaryCodeMatrix) else pack_codes(Z)
    if codes.bits != f.A.shape[1]:
        raise DataError(f"decoder expects L={f.A.shape[1]}, codes have L={codes.bits}")
    uniq, inverse = np.unique(codes.words, return_inverse=True)
    table = np.empty((f.A.shape[0], uniq.shape[0]))
    for k, word in enumerate(uniq):
        cols = [l for l in range(codes.bits) if (int(word) >> l) & 1]
        table[:, k] = f.b + f.A[:, cols].sum(axis=1)
    return table[:, inverse.reshape(-1)]


def reconstruction_error(f: LinearDecoder, Z, X) -> float:
    """``sum_n ||x_n - f(z_n)||^2``."""
    return float(((as_values(X) - decode(f, Z)) ** 2).sum())


# -- model file ----------------------------------------------------------------

def _row(vec) -> str:
    return " ".join(f"{float(v):.17g}" for v in np.ravel(vec))


def save_model(path, h: LinearEncoder, f: LinearDecoder | None = None,
               normalization: Normalization | None = None) -> None:
    """Text model: ``BHM1 L D``, rows of W, w0, rows of A, b, mean, scale.

    A missing decoder is written as zeros; a missing normalization as the
    identity (zero mean, unit scale).
    """
    L, D = h.W.shape
    if f is None:
        f = LinearDecoder(np.zeros((D, L)), np.zeros(D))
    mean = normalization.mean if normalization is not None else np.zeros(D)
    scale = normalization.scale if normalization is not None else 1.0
    lines = [f"{MODEL_MAGIC} {L} {D}"]
    lines += [_row(r) for r in h.W]
    lines.append(_row(h.w0))
    lines += [_row(r) for r in f.A]
    lines.append(_row(f.b))
    lines.append(_row(mean))
    lines.append(_row([scale]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path):
    """Return ``(encoder, decoder, normalization)`` from a model file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    lines = path.read_text().splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 3 or head[0] != MODEL_MAGIC:
        raise DataError(f"{path}: not a model file")
    L, D = int(head[1]), int(head[2])
    try:
        rows = [np.array([float(t) for t in ln.split()]) for ln in lines[1:]]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}")
    if len(rows) != L + 1 + D + 1 + 2:
        raise DataError(f"{path}: expected {L + D + 4} rows after header, got {len(rows)}")
    W = np.array(rows[:L])
    w0 = rows[L]
    A = np.array(rows[L + 1:L + 1 + D])
    b = rows[L + 1 + D]
    mean = rows[L + 2 + D]
    scale = float(rows[L + 3 + D][0])
    if W.shape != (L, D) or w0.shape != (L,) or A.shape != (D, L) or b.shape != (D,):
        raise DataError(f"{path}: row lengths do not match L={L}, D={D}")
    norm = None
    if np.any(mean != 0.0) or scale != 1.0:
        norm = Normalization(mean, scale)
    return LinearEncoder(W, w0), LinearDecoder(A, b), norm
