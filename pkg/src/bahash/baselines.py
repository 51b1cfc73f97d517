"""PCA, thresholded PCA and Iterative Quantization (ITQ) hashers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bahash.autoencoder import LinearDecoder, LinearEncoder, f_step, reconstruction_error
from bahash.data import BinaryCodeMatrix, DataError, as_values, pack_codes


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray         # (D,)
    components: np.ndarray   # (L, D), orthonormal rows
    eigenvalues: np.ndarray  # (L,), non-increasing, sample covariance (ddof=1)

    @property
    def bits(self) -> int:
        return self.components.shape[0]

    def project(self, X) -> np.ndarray:
        """``(L, N)`` principal projections of the centered data."""
        return self.components @ (as_values(X) - self.mean[:, None])

    def encoder(self) -> LinearEncoder:
        return LinearEncoder(self.components.copy(), -self.components @ self.mean)


@dataclass(frozen=True)
class ItqModel:
    pca: PcaModel
    rotation: np.ndarray                       # (L, L) orthogonal
    objective: list = field(default_factory=list, compare=False)

    def encoder(self) -> LinearEncoder:
        # sgn(R' C (x - m)) with sgn(0) = +1, i.e. step(W x + w0)
        W = self.rotation.T @ self.pca.components
        return LinearEncoder(W, -W @ self.pca.mean)


def fit_pca(X, L: int) -> PcaModel:
    """Top-``L`` principal directions by SVD of the centered data.

    Each component is signed so its largest-magnitude entry is positive.
    """
    Xv = as_values(X)
    D, N = Xv.shape
    if N <= L:
        raise DataError(f"PCA needs N > L, got N={N}, L={L}")
    mean = Xv.mean(axis=1)
    U, s, _ = np.linalg.svd(Xv - mean[:, None], full_matrices=False)
    tol = s.max() * max(D, N) * np.finfo(float).eps if s.size else 0.0
    rank = int((s > tol).sum())
    if L > rank:
        raise DataError(f"requested L={L} components but data rank is {rank}")
    comps = U[:, :L].T.copy()
    for k in range(L):
        if comps[k, np.argmax(np.abs(comps[k]))] < 0:
            comps[k] = -comps[k]
    return PcaModel(mean, comps, s[:L] ** 2 / (N - 1))


def pca_reconstruction_error(m: PcaModel, X) -> float:
    Xc = as_values(X) - m.mean[:, None]
    return float(((Xc - m.components.T @ (m.components @ Xc)) ** 2).sum())


def tpca_encode(m: PcaModel, X) -> BinaryCodeMatrix:
    """Bit ``l`` is 1 when the ``l``-th principal projection is ``>= 0``."""
    return pack_codes((m.project(X) >= 0.0).astype(np.uint8))


def _sgn(t):
    return np.where(t >= 0.0, 1.0, -1.0)


def itq_objective(B, V, R) -> float:
    return float(((B - V @ R) ** 2).sum())


def itq_rotation(V, iters: int = 50, R0=None, seed: int = 0):
    """Alternate ``B = sgn(V R)`` and the orthogonal Procrustes update of ``R``.

    ``V`` is ``(N, L)``.  Returns ``(R, B, history)`` where ``history`` holds
    the objective ``||B - V R||^2`` after every half-step.  Stops early when
    ``B`` stops changing.
    """
    V = np.asarray(V, dtype=np.float64)
    L = V.shape[1]
    if R0 is None:
        G = np.random.default_rng(seed).normal(size=(L, L))
        R, _ = np.linalg.qr(G)
    else:
        R = np.asarray(R0, dtype=np.float64)
    history = []
    B = None
    for _ in range(iters):
        B_new = _sgn(V @ R)
        history.append(itq_objective(B_new, V, R))
        if B is not None and np.array_equal(B, B_new):
            B = B_new
            break
        B = B_new
        # maximize tr(R' V'B): V'B = U S Wt  ->  R = U Wt
        U, _, Wt = np.linalg.svd(V.T @ B)
        R = U @ Wt
        history.append(itq_objective(B, V, R))
    if B is None:
        B = _sgn(V @ R)
    return R, B, history


def fit_itq(X, L: int, iters: int = 50, seed: int = 0) -> ItqModel:
    pca = fit_pca(X, L)
    R, _, history = itq_rotation(pca.project(X).T, iters, seed=seed)
    return ItqModel(pca, R, history)


def itq_encode(m: ItqModel, X) -> BinaryCodeMatrix:
    V = m.pca.project(X).T
    return pack_codes(((V @ m.rotation) >= 0.0).T.astype(np.uint8))


def refit_decoder(Z, X) -> tuple[LinearDecoder, float]:
    """Optimal linear decoder for fixed codes and its reconstruction error."""
    f = f_step(Z, X)
    return f, reconstruction_error(f, Z, X)
