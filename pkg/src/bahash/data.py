"""Feature and code containers, file formats, normalization and splits.

Points are stored column-per-point: a feature matrix has shape ``(D, N)``
and a code matrix unpacks to shape ``(L, N)``.  Feature values are kept in
Fortran order so each point is a contiguous run of memory.

File formats (all integers little-endian):

* raw-f32 features: ``b"BHF1"``, ``D`` (u32), ``N`` (u32), then ``D*N``
  float32 values, point-major (all D values of point 0 first).
* codes: ``b"BHC1"``, ``L`` (u32), ``N`` (u32), then ``ceil(L/8)`` bytes per
  point, bit ``l`` of a point stored LSB-first.
* CSV features: one row per feature, comma-separated, no header.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"BHF1"
CODES_MAGIC = b"BHC1"
MAX_BITS = 64


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class Normalization:
    """Affine map ``x -> (x - mean) / scale`` with one global scale."""

    mean: np.ndarray
    scale: float

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None]) / self.scale

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.mean[:, None]


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense real matrix of ``N`` points in ``D`` dimensions, one column per point."""

    values: np.ndarray
    normalization: Normalization | None = None

    def __post_init__(self):
        v = np.asfortranarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise DataError(f"feature matrix must be non-empty 2-D, got shape {v.shape}")
        bad = ~np.isfinite(v)
        if bad.any():
            d, n = np.argwhere(bad)[0]
            raise DataError(f"non-finite value at feature {d}, point {n}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dims(self) -> int:
        return self.values.shape[0]

    @property
    def count(self) -> int:
        return self.values.shape[1]

    def subset(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(self.values[:, idx], self.normalization)


@dataclass(frozen=True)
class BinaryCodeMatrix:
    """``N`` binary codes of ``L`` bits, one uint64 word per point.

    Bit ``l`` of point ``n`` is ``(words[n] >> l) & 1``.
    """

    bits: int
    words: np.ndarray

    def __post_init__(self):
        if not 1 <= self.bits <= MAX_BITS:
            raise DataError(f"code length must be in 1..{MAX_BITS}, got {self.bits}")
        w = np.ascontiguousarray(self.words, dtype=np.uint64).reshape(-1)
        if self.bits < 64 and np.any(w >> np.uint64(self.bits)):
            raise DataError("bits above position L must be zero")
        w.setflags(write=False)
        object.__setattr__(self, "words", w)

    @property
    def count(self) -> int:
        return self.words.shape[0]

    def unpack(self) -> np.ndarray:
        """Return the ``(L, N)`` uint8 bit array."""
        return unpack_codes(self)

    def subset(self, idx) -> "BinaryCodeMatrix":
        return BinaryCodeMatrix(self.bits, self.words[idx])

    def __eq__(self, other):
        if not isinstance(other, BinaryCodeMatrix):
            return NotImplemented
        return self.bits == other.bits and np.array_equal(self.words, other.words)

    __hash__ = None


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int = field(default=0)


def pack_codes(Z) -> BinaryCodeMatrix:
    """Pack an ``(L, N)`` array of 0/1 values into one word per point."""
    Z = np.asarray(Z)
    if Z.ndim != 2:
        raise DataError(f"code array must be 2-D (L, N), got shape {Z.shape}")
    L = Z.shape[0]
    if not 1 <= L <= MAX_BITS:
        raise DataError(f"code length must be in 1..{MAX_BITS}, got {L}")
    if Z.size and not np.all((Z == 0) | (Z == 1)):
        raise DataError("code entries must be 0 or 1")
    weights = np.uint64(1) << np.arange(L, dtype=np.uint64)
    words = (Z.astype(np.uint64) * weights[:, None]).sum(axis=0, dtype=np.uint64)
    return BinaryCodeMatrix(L, words)


def unpack_codes(codes: BinaryCodeMatrix) -> np.ndarray:
    shifts = np.arange(codes.bits, dtype=np.uint64)
    return ((codes.words[None, :] >> shifts[:, None]) & np.uint64(1)).astype(np.uint8)


def as_bits(Z) -> np.ndarray:
    """Accept a BinaryCodeMatrix or an (L, N) array; return (L, N) uint8."""
    if isinstance(Z, BinaryCodeMatrix):
        return Z.unpack()
    return np.asarray(Z, dtype=np.uint8)


def as_values(X) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        return X.values
    return np.asarray(X, dtype=np.float64)


# -- normalization -----------------------------------------------------------

def normalize(X: FeatureMatrix) -> FeatureMatrix:
    """Center every feature and divide by the largest feature range.

    A single global scale keeps Euclidean distance ratios intact.
    """
    v = X.values
    if X.count < 2:
        raise DataError("normalization needs at least 2 points")
    mean = v.mean(axis=1)
    ranges = v.max(axis=1) - v.min(axis=1)
    scale = float(ranges.max())
    if scale <= 0.0:
        raise DataError("all features are constant; cannot normalize")
    norm = Normalization(mean, scale)
    return FeatureMatrix(norm.apply(v), norm)


def apply_normalization(X: FeatureMatrix, norm: Normalization | None) -> FeatureMatrix:
    """Map new data through a stored normalization (identity when ``None``)."""
    if norm is None:
        return X
    if norm.mean.shape[0] != X.dims:
        raise DataError(f"normalization is for D={norm.mean.shape[0]}, data has D={X.dims}")
    return FeatureMatrix(norm.apply(X.values), norm)


def split_dataset(n: int, validation: float = 0.1, test: float = 0.0,
                  seed: int = 0) -> DatasetSplit:
    """Random disjoint train/validation/test index sets covering ``range(n)``."""
    if not (0 <= validation < 1 and 0 <= test < 1 and validation + test < 1):
        raise DataError("split fractions must be in [0, 1) and sum below 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(validation * n))
    n_test = int(round(test * n))
    val = np.sort(perm[:n_val])
    tst = np.sort(perm[n_val:n_val + n_test])
    trn = np.sort(perm[n_val + n_test:])
    return DatasetSplit(trn, val, tst, seed)


# -- feature files -----------------------------------------------------------

def _load_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            row = []
            for j, tok in enumerate(line.split(",")):
                try:
                    val = float(tok)
                except ValueError:
                    raise DataError(f"{path}: cannot parse {tok.strip()!r} at row {i}, column {j}")
                if not np.isfinite(val):
                    raise DataError(f"{path}: non-finite value at row {i}, column {j}")
                row.append(val)
            if rows and len(row) != len(rows[0]):
                raise DataError(f"{path}: row {i} has {len(row)} columns, expected {len(rows[0])}")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: empty file")
    return np.array(rows, dtype=np.float64)


def _load_raw(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < 12:
        raise DataError(f"{path}: file too short for header ({len(blob)} bytes)")
    if blob[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {FEATURE_MAGIC!r}")
    D, N = struct.unpack("<II", blob[4:12])
    if D == 0 or N == 0:
        raise DataError(f"{path}: empty matrix in header (D={D}, N={N})")
    expected = 12 + 4 * D * N
    if len(blob) != expected:
        raise DataError(f"{path}: header says D={D}, N={N} ({expected} bytes) "
                        f"but file has {len(blob)} bytes")
    flat = np.frombuffer(blob, dtype="<f4", offset=12).astype(np.float64)
    values = flat.reshape(N, D).T
    bad = ~np.isfinite(values)
    if bad.any():
        d, n = np.argwhere(bad)[0]
        raise DataError(f"{path}: non-finite value at feature {d}, point {n}")
    return values


def load_features(path, format: str | None = None) -> FeatureMatrix:
    """Read a feature file.  ``format`` is ``"csv"`` or ``"raw-f32"``;
    when omitted it is inferred from the extension (``.csv`` or anything else)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "raw-f32"
    if format == "csv":
        return FeatureMatrix(_load_csv(path))
    if format == "raw-f32":
        return FeatureMatrix(_load_raw(path))
    raise DataError(f"unknown feature format {format!r}")


def save_features(path, X, format: str | None = None) -> None:
    path = Path(path)
    values = as_values(X)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "raw-f32"
    if format == "csv":
        np.savetxt(path, values, delimiter=",", fmt="%.17g")
        return
    D, N = values.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<II", D, N))
        fh.write(np.ascontiguousarray(values.T, dtype="<f4").tobytes())


# -- code files --------------------------------------------------------------

def save_codes(path, codes: BinaryCodeMatrix) -> None:
    nbytes = (codes.bits + 7) // 8
    raw = codes.words.astype("<u8").view(np.uint8).reshape(-1, 8)[:, :nbytes]
    with open(path, "wb") as fh:
        fh.write(CODES_MAGIC + struct.pack("<II", codes.bits, codes.count))
        fh.write(np.ascontiguousarray(raw).tobytes())


def load_codes(path) -> BinaryCodeMatrix:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != CODES_MAGIC:
        raise DataError(f"{path}: not a codes file (bad magic or short header)")
    L, N = struct.unpack("<II", blob[4:12])
    if not 1 <= L <= MAX_BITS:
        raise DataError(f"{path}: code length {L} out of range")
    nbytes = (L + 7) // 8
    if len(blob) != 12 + N * nbytes:
        raise DataError(f"{path}: expected {12 + N * nbytes} bytes for L={L}, N={N}, "
                        f"got {len(blob)}")
    raw = np.frombuffer(blob, dtype=np.uint8, offset=12).reshape(N, nbytes)
    padded = np.zeros((N, 8), dtype=np.uint8)
    padded[:, :nbytes] = raw
    words = padded.view("<u8").reshape(N).astype(np.uint64)
    return BinaryCodeMatrix(L, words)
