"""Per-point binary proximal operator over the codes.

For one point the problem is

    min_{z in {0,1}^L}  e(z) = ||x - A z - b||^2 + mu * ||z - a||^2

with ``a = h(x)`` the encoder's code (the *anchor*).  A thin QR of ``A``
turns it into ``||y - R z||^2 + mu * ||z - a||^2`` with ``R`` upper
triangular and ``y = Q^T (x - b)``; both problems share their minimizers.

Solvers:

* ``solve_exact``: enumeration in increasing Hamming distance from the
  anchor, radius pruning at ``e_best / mu``, incremental row-by-row
  evaluation with early abort, and early exit on a global-optimality
  certificate.  Exact; no heuristic pruning.
* ``solve_group_alternating``: exact minimization over contiguous g-bit
  groups in turn until a sweep changes nothing.
* ``solve_relaxed_qp`` + ``greedy_binarize``: box-relaxed QP by ADMM with
  one shared factorization, then sequential binarization.
* ``zstep_inexact``: best of (binarized relaxed, warm start), refined by
  group alternation; never worse than the warm start.

Certificates work on the +-1 form ``0.5 s'Qs + b's`` with ``s = 2z - 1``.
Expanding ``e`` with ``M = R'R + mu I`` and ``c = R'y + mu a`` gives
``e = z'Mz - 2c'z + const``; substituting ``z = (s + 1)/2`` yields
``Q = M/2`` and ``b = M e/2 - c``.  Then ``Qs + b = Mz - c``, so the
certificate vector ``v = S(Qs + b)`` equals ``s * (mu (z - a) - R' r)``
with ``r = y - Rz`` the residual; it costs one triangular product.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numba import njit

from bahash._pool import chunk_bounds, resolve_workers, run_parallel

MAX_EXACT_BITS = 24

CERT_NONE = 0
CERT_SUFFICIENT = 1
# mu exceeds e(anchor): every other code costs more, no certificate needed
CERT_ANCHOR_BOUND = 2

# relative margin a candidate must beat the incumbent by to replace it
IMPROVE_RTOL = 1e-12


class Certificate(str, enum.Enum):
    SUFFICIENT_HIT = "sufficient-hit"
    NECESSARY_FAILED = "necessary-failed"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class ZStepProblem:
    """Reduced problem ``||y - R z||^2 + mu ||z - anchor||^2`` (+ ``constant``)."""

    R: np.ndarray
    y: np.ndarray
    mu: float
    anchor: np.ndarray
    constant: float = 0.0
    rank_deficient: bool = False

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        R = np.asarray(self.R, dtype=np.float64)
        if R.ndim != 2 or R.shape[0] != R.shape[1] or np.any(np.tril(R, -1)):
            raise ValueError("R must be square upper triangular")
        object.__setattr__(self, "R", np.ascontiguousarray(R))
        object.__setattr__(self, "y", np.ascontiguousarray(self.y, dtype=np.float64))
        object.__setattr__(self, "anchor", np.ascontiguousarray(self.anchor, dtype=np.uint8))

    @property
    def bits(self) -> int:
        return self.R.shape[0]

    def objective(self, z) -> float:
        """Reduced objective (without ``constant``), computed from scratch."""
        z = np.asarray(z, dtype=np.float64)
        r = self.y - self.R @ z
        return float(r @ r + self.mu * np.sum((z - self.anchor) ** 2))


@dataclass(frozen=True)
class ZStepSolution:
    z: np.ndarray
    objective: float
    certificate: str
    stats: dict = field(default_factory=dict, compare=False)


# -- reduction -----------------------------------------------------------------

def reduction_speedup(D: int, L: int) -> float:
    """Per-evaluation saving of the triangular ``L x L`` form over ``D x L``."""
    return 2.0 * D / L


def _rank_deficient(R) -> bool:
    d = np.abs(np.diag(R))
    return bool(d.size and d.min() <= d.max() * R.shape[0] * np.finfo(float).eps)


def qr_reduce(A, b, x, mu, anchor) -> ZStepProblem:
    A = np.asarray(A, dtype=np.float64)
    D, L = A.shape
    if D < L:
        raise ValueError(f"need D >= L for the reduction, got D={D}, L={L}")
    Q, R = np.linalg.qr(A)
    t = np.asarray(x, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    y = Q.T @ t
    constant = max(float(t @ t - y @ y), 0.0)
    return ZStepProblem(R, y, float(mu), anchor, constant, _rank_deficient(R))


def qr_reduce_batch(A, b, X):
    """Shared ``R`` and per-point reduced targets ``Y`` (L, N) for all columns of X."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape[0] < A.shape[1]:
        raise ValueError(f"need D >= L for the reduction, got shape {A.shape}")
    Q, R = np.linalg.qr(A)
    Y = Q.T @ (np.asarray(X, dtype=np.float64) - np.asarray(b)[:, None])
    return np.ascontiguousarray(R), np.ascontiguousarray(Y)


def batch_objective(R, Y, mu, anchors, Z) -> np.ndarray:
    """Reduced objective of every column of ``Z``."""
    Zf = Z.astype(np.float64)
    res = Y - R @ Zf
    return (res ** 2).sum(axis=0) + mu * ((Zf - anchors) ** 2).sum(axis=0)


def all_codes(L: int) -> np.ndarray:
    """Every code of ``L`` bits as columns of an ``(L, 2^L)`` array, in integer order."""
    v = np.arange(1 << L, dtype=np.uint64)
    return ((v[None, :] >> np.arange(L, dtype=np.uint64)[:, None]) & np.uint64(1)).astype(np.uint8)


def brute_force_batch(R, Y, mu, anchors, block: int = 256):
    """Naive minimum over all ``2^L`` codes per point; ``(Z, objective)``.

    Diagnostic only (``bench zstep``).  Ties go to the smallest integer code,
    so only the objective is comparable with the pruned search.
    """
    R = np.asarray(R, dtype=np.float64)
    L, N = Y.shape
    C = all_codes(L).astype(np.float64)
    RC = R @ C
    Z = np.empty((L, N), dtype=np.uint8)
    obj = np.empty(N)
    for lo in range(0, N, block):
        hi = min(N, lo + block)
        y = Y[:, lo:hi]
        a = np.asarray(anchors[:, lo:hi], dtype=np.float64)
        e = ((y.T[:, :, None] - RC[None]) ** 2).sum(axis=1)
        e += mu * ((a.T[:, :, None] - C[None]) ** 2).sum(axis=1)
        k = e.argmin(axis=1)
        Z[:, lo:hi] = C[:, k].astype(np.uint8)
        obj[lo:hi] = e[np.arange(hi - lo), k]
    return Z, obj


# -- certificates --------------------------------------------------------------

def pm1_form(p: ZStepProblem):
    """``(Q, b, const)`` with ``e(z) = 0.5 s'Qs + b's + const`` for ``s = 2z - 1``."""
    L = p.bits
    M = p.R.T @ p.R + p.mu * np.eye(L)
    c = p.R.T @ p.y + p.mu * p.anchor
    e = np.ones(L)
    const = 0.25 * e @ M @ e - c @ e + p.y @ p.y + p.mu * p.anchor.sum()
    return 0.5 * M, 0.5 * M @ e - c, float(const)


@dataclass(frozen=True)
class CertificateData:
    """Quantities shared by all problems with the same ``Q``."""

    lam_min: float
    qtilde: np.ndarray
    qdiag: np.ndarray


def prepare_certificate(Q) -> CertificateData:
    Q = np.asarray(Q, dtype=np.float64)
    off = np.abs(Q).sum(axis=1) - np.abs(np.diag(Q))
    return CertificateData(float(np.linalg.eigvalsh(Q)[0]), np.diag(Q) - off, np.diag(Q).copy())


def _margin(*arrays) -> np.ndarray:
    return 1e-9 * (1.0 + sum(np.abs(a) for a in arrays))


def certify_global(Q, b, s, data: CertificateData | None = None) -> Certificate:
    """Global-optimality test for ``s`` in ``min 0.5 s'Qs + b's, s in {-1,1}^n``.

    Sufficient: ``v <= lam_min`` or ``v <= qtilde`` componentwise, where
    ``v = S Q S e + S b``.  Each bound lower-bounds the quadratic change of
    any set of flips, so either one alone proves optimality.
    Necessary: ``v <= diag(Q)`` (no single flip helps) and ``b's <= 0``
    (the full flip ``-s`` does not help).
    """
    Q = np.asarray(Q, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    data = data or prepare_certificate(Q)
    v = s * (Q @ s) + s * b
    if np.all(v <= data.lam_min - _margin(v, data.lam_min)) or \
            np.all(v <= data.qtilde - _margin(v, data.qtilde)):
        return Certificate.SUFFICIENT_HIT
    bs = float(b @ s)
    if np.any(v > data.qdiag + _margin(v, data.qdiag)) or bs > 1e-9 * (1.0 + abs(bs)):
        return Certificate.NECESSARY_FAILED
    return Certificate.INCONCLUSIVE


def certify_relaxed(Q, b, x, data: CertificateData | None = None):
    """Binary global optimizer read off a relaxed ``[-1, 1]^n`` minimizer, or None.

    ``Q`` must be positive semidefinite.  A binary ``x`` with
    ``S Q S e + S b <= 0`` solves both problems; otherwise ``y = sgn(x)``
    (``sgn(0) = 1``) is optimal when ``Y Q (y - x) <= lam_min``.
    """
    Q = np.asarray(Q, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    data = data or prepare_certificate(Q)
    if np.all(np.abs(x) == 1.0):
        v = x * (Q @ x) + x * b
        if np.all(v <= -_margin(v)):
            return x.copy()
    y = np.where(x >= 0.0, 1.0, -1.0)
    t = y * (Q @ (y - x))
    if np.all(t <= data.lam_min - _margin(t, data.lam_min)):
        return y
    return None


def _cert_constants(R, mu):
    """lam_min and qtilde of ``Q = (R'R + mu I) / 2``; computed once per batch."""
    L = R.shape[0]
    data = prepare_certificate(0.5 * (R.T @ R + mu * np.eye(L)))
    return data.lam_min, np.ascontiguousarray(data.qtilde)


# -- numba kernels -------------------------------------------------------------

@njit(nogil=True, cache=True)
def _residual(R, y, z, r):
    L = y.shape[0]
    for i in range(L):
        s = y[i]
        for j in range(i, L):
            s -= R[i, j] * z[j]
        r[i] = s


@njit(nogil=True, cache=True)
def _sufficient(R, mu, a, z, r, lam_min, qtilde):
    # v_i = s_i * (mu (z_i - a_i) - (R' r)_i)
    L = z.shape[0]
    hit_lam = True
    hit_q = True
    for i in range(L):
        g = mu * (z[i] - a[i])
        for k in range(i + 1):
            g -= R[k, i] * r[k]
        v = g if z[i] > 0.5 else -g
        if v > lam_min - 1e-9 * (1.0 + abs(v) + abs(lam_min)):
            hit_lam = False
        if v > qtilde[i] - 1e-9 * (1.0 + abs(v) + abs(qtilde[i])):
            hit_q = False
        if not hit_lam and not hit_q:
            return False
    return True


@njit(nogil=True, cache=True)
def _exact_point(R, y, mu, a, lam_min, qtilde, use_cert, use_abort, z_out, stats):
    """Hamming-ordered exact search; writes the minimizer into ``z_out``.

    stats: [radius, evaluated, aborted, certificate]
    """
    L = y.shape[0]
    af = np.empty(L)
    delta = np.empty(L)
    for j in range(L):
        af[j] = a[j]
        delta[j] = 1.0 - 2.0 * a[j]
    r0 = np.empty(L)
    _residual(R, y, af, r0)
    suffix = np.zeros(L + 1)
    for i in range(L - 1, -1, -1):
        suffix[i] = suffix[i + 1] + r0[i] * r0[i]
    best = suffix[0]
    best_d = 0
    best_comb = np.zeros(L, dtype=np.int64)
    comb = np.zeros(L, dtype=np.int64)
    zt = np.empty(L)
    rt = np.empty(L)
    radius = 0
    n_eval = 1
    n_abort = 0
    cert = CERT_NONE
    if mu > best:
        cert = CERT_ANCHOR_BOUND
    elif use_cert and _sufficient(R, mu, af, af, r0, lam_min, qtilde):
        cert = CERT_SUFFICIENT
    if cert == CERT_NONE:
        done = False
        for d in range(1, L + 1):
            # a code at distance d costs at least mu*d: radius floor(best/mu)
            if mu * d >= best:
                break
            radius = d
            for t in range(d):
                comb[t] = t
            while True:
                top = comb[d - 1]
                part = mu * d + suffix[top + 1]
                ok = True
                if use_abort and part >= best:
                    ok = False
                else:
                    for i in range(top, -1, -1):
                        ri = r0[i]
                        for t in range(d - 1, -1, -1):
                            j = comb[t]
                            if j < i:
                                break
                            ri -= delta[j] * R[i, j]
                        part += ri * ri
                        if use_abort and part >= best:
                            ok = False
                            break
                if ok:
                    n_eval += 1
                else:
                    n_abort += 1
                if ok and part < best:
                    best = part
                    best_d = d
                    for t in range(d):
                        best_comb[t] = comb[t]
                    if use_cert:
                        for j in range(L):
                            zt[j] = af[j]
                        for t in range(d):
                            zt[comb[t]] = 1.0 - af[comb[t]]
                        _residual(R, y, zt, rt)
                        if _sufficient(R, mu, af, zt, rt, lam_min, qtilde):
                            cert = CERT_SUFFICIENT
                            done = True
                            break
                # next d-subset of range(L) in lexicographic order
                t = d - 1
                while t >= 0 and comb[t] == L - d + t:
                    t -= 1
                if t < 0:
                    break
                comb[t] += 1
                for u in range(t + 1, d):
                    comb[u] = comb[u - 1] + 1
            if done:
                break
    for j in range(L):
        z_out[j] = a[j]
    for t in range(best_d):
        z_out[best_comb[t]] = 1 - a[best_comb[t]]
    stats[0] = radius
    stats[1] = n_eval
    stats[2] = n_abort
    stats[3] = cert


@njit(nogil=True, cache=True)
def _exact_batch(R, Y, mu, A, lam_min, qtilde, use_cert, use_abort, Z, S, lo, hi):
    L = R.shape[0]
    z = np.empty(L, dtype=np.uint8)
    st = np.zeros(4, dtype=np.int64)
    for n in range(lo, hi):
        _exact_point(R, Y[:, n].copy(), mu, A[:, n].copy(), lam_min, qtilde,
                     use_cert, use_abort, z, st)
        for j in range(L):
            Z[j, n] = z[j]
        for k in range(4):
            S[k, n] = st[k]


@njit(nogil=True, cache=True)
def _objective(R, y, mu, a, z, r):
    _residual(R, y, z, r)
    e = 0.0
    for i in range(y.shape[0]):
        e += r[i] * r[i] + mu * (z[i] - a[i]) * (z[i] - a[i])
    return e


@njit(nogil=True, cache=True)
def _group_point(R, y, mu, a, z, g, max_sweeps):
    """In-place alternation over contiguous g-bit groups; returns sweeps used."""
    L = y.shape[0]
    af = np.empty(L)
    for j in range(L):
        af[j] = a[j]
    r = np.empty(L)
    e = _objective(R, y, mu, af, z, r)
    suffix = np.zeros(L + 1)
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        changed = False
        for g0 in range(0, L, g):
            g1 = min(g0 + g, L)
            G = g1 - g0
            for i in range(L - 1, -1, -1):
                suffix[i] = suffix[i + 1] + r[i] * r[i]
            ham = 0.0
            for j in range(L):
                ham += (z[j] - af[j]) * (z[j] - af[j])
            best = e - IMPROVE_RTOL * (1.0 + abs(e))
            best_mask = 0
            for mask in range(1, 1 << G):
                top = g0
                newham = ham
                for t in range(G):
                    if (mask >> t) & 1:
                        j = g0 + t
                        top = j
                        newham += 1.0 if z[j] == af[j] else -1.0
                part = mu * newham + suffix[top + 1]
                if part >= best:
                    continue
                ok = True
                for i in range(top, -1, -1):
                    ri = r[i]
                    for t in range(G):
                        if (mask >> t) & 1:
                            j = g0 + t
                            if j >= i:
                                ri -= (1.0 - 2.0 * z[j]) * R[i, j]
                    part += ri * ri
                    if part >= best:
                        ok = False
                        break
                if ok:
                    best = part
                    best_mask = mask
            if best_mask != 0:
                for t in range(G):
                    if (best_mask >> t) & 1:
                        z[g0 + t] = 1.0 - z[g0 + t]
                e = _objective(R, y, mu, af, z, r)
                changed = True
        if not changed:
            break
    return sweeps


@njit(nogil=True, cache=True)
def _greedy_point(R, y, mu, a, u, z):
    """Sequential binarization of ``u`` into ``z``; falls back to rounding if better."""
    L = y.shape[0]
    af = np.empty(L)
    v = np.empty(L)
    for j in range(L):
        af[j] = a[j]
        v[j] = u[j]
    r = np.empty(L)
    _residual(R, y, v, r)
    for l in range(L):
        # only rows 0..l of the residual see bit l
        val0 = mu * af[l] * af[l]
        val1 = mu * (1.0 - af[l]) * (1.0 - af[l])
        for i in range(l + 1):
            r0 = r[i] + v[l] * R[i, l]
            r1 = r0 - R[i, l]
            val0 += r0 * r0
            val1 += r1 * r1
        if val1 < val0:
            best_c = 1.0
        elif val0 < val1:
            best_c = 0.0
        else:
            best_c = 1.0 if u[l] >= 0.5 else 0.0
        dv = best_c - v[l]
        for i in range(l + 1):
            r[i] -= dv * R[i, l]
        v[l] = best_c
    for j in range(L):
        z[j] = v[j]
    e_greedy = _objective(R, y, mu, af, z, r)
    zr = np.empty(L)
    for j in range(L):
        zr[j] = 1.0 if u[j] >= 0.5 else 0.0
    e_round = _objective(R, y, mu, af, zr, r)
    if e_round < e_greedy:
        for j in range(L):
            z[j] = zr[j]


@njit(nogil=True, cache=True)
def _inexact_batch(R, Y, mu, A, U, W, g, max_sweeps, Z, S, lo, hi):
    """Greedy-binarized relaxed start vs warm start, then group alternation.

    S rows: [started_from_relaxed, sweeps]
    """
    L = R.shape[0]
    z = np.empty(L)
    zw = np.empty(L)
    af = np.empty(L)
    r = np.empty(L)
    for n in range(lo, hi):
        y = Y[:, n].copy()
        a = A[:, n].copy()
        for j in range(L):
            af[j] = a[j]
            zw[j] = W[j, n]
        _greedy_point(R, y, mu, a, U[:, n].copy(), z)
        e_relaxed = _objective(R, y, mu, af, z, r)
        e_warm = _objective(R, y, mu, af, zw, r)
        from_relaxed = e_relaxed < e_warm - IMPROVE_RTOL * (1.0 + abs(e_warm))
        if not from_relaxed:
            for j in range(L):
                z[j] = zw[j]
        sweeps = _group_point(R, y, mu, a, z, g, max_sweeps)
        for j in range(L):
            Z[j, n] = np.uint8(z[j])
        S[0, n] = 1 if from_relaxed else 0
        S[1, n] = sweeps


# -- single-problem API ------------------------------------------------------------

def solve_exact(p: ZStepProblem, use_certificates: bool = True,
                early_abort: bool = True) -> ZStepSolution:
    """Global minimizer of the reduced problem (ties: first in Hamming order)."""
    if p.bits > MAX_EXACT_BITS:
        raise ValueError(f"exact Z-step limited to L <= {MAX_EXACT_BITS}, got {p.bits}")
    lam, qt = _cert_constants(p.R, p.mu)
    z = np.empty(p.bits, dtype=np.uint8)
    st = np.zeros(4, dtype=np.int64)
    _exact_point(p.R, p.y, float(p.mu), p.anchor, lam, qt, use_certificates,
                 early_abort, z, st)
    cert = "proven-global" if st[3] != CERT_NONE else "bound-exhausted"
    stats = {"radius": int(st[0]), "evaluated": int(st[1]), "aborted": int(st[2])}
    return ZStepSolution(z, p.objective(z), cert, stats)


def solve_group_alternating(p: ZStepProblem, g: int, z0,
                            max_sweeps: int = 1000) -> ZStepSolution:
    L = p.bits
    if not 1 <= g <= L:
        raise ValueError(f"group size must be in 1..{L}, got {g}")
    z = np.asarray(z0, dtype=np.float64).copy()
    if g == L:
        # one group: the exact search, kept only if it beats the start
        sol = solve_exact(p)
        if sol.objective < p.objective(z) - IMPROVE_RTOL * (1 + abs(p.objective(z))):
            z = sol.z.astype(np.float64)
        sweeps = 1
    else:
        sweeps = _group_point(p.R, p.y, float(p.mu), p.anchor, z, g, max_sweeps)
    zb = z.astype(np.uint8)
    return ZStepSolution(zb, p.objective(zb), f"local-min-group-{g}", {"sweeps": int(sweeps)})


def greedy_binarize(p: ZStepProblem, u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
    z = np.empty(p.bits)
    _greedy_point(p.R, p.y, float(p.mu), p.anchor, u, z)
    return z.astype(np.uint8)


def zstep_inexact(p: ZStepProblem, g: int, warm, u=None) -> ZStepSolution:
    """Relaxed-QP start vs warm start, whichever is better, then g-bit alternation."""
    if u is None:
        u = solve_relaxed_qp(p.R, p.y[:, None], p.mu, p.anchor[:, None]).u[:, 0]
    z1 = greedy_binarize(p, u)
    warm = np.asarray(warm, dtype=np.uint8)
    e_warm = p.objective(warm)
    start = z1 if p.objective(z1) < e_warm - IMPROVE_RTOL * (1 + abs(e_warm)) else warm
    return solve_group_alternating(p, g, start)


# -- relaxed QP ----------------------------------------------------------------

@dataclass
class RelaxedQPResult:
    u: np.ndarray            # (L, N) solutions in the box
    dual: np.ndarray         # (L, N) scaled ADMM duals, for warm starts
    converged: np.ndarray    # (N,) bool
    iterations: int


@njit(nogil=True, cache=True)
def _polish_columns(H, q, U, out):
    L, N = U.shape
    for n in range(N):
        g = H @ np.ascontiguousarray(U[:, n]) - q[:, n]
        free = np.empty(L, dtype=np.int64)
        nf = 0
        for i in range(L):
            if U[i, n] <= 1e-9 and g[i] >= 0.0:
                out[i, n] = 0.0
            elif U[i, n] >= 1.0 - 1e-9 and g[i] <= 0.0:
                out[i, n] = 1.0
            else:
                free[nf] = i
                nf += 1
        if nf == 0:
            continue
        M = np.empty((nf, nf))
        rhs = np.empty(nf)
        for a in range(nf):
            i = free[a]
            rhs[a] = q[i, n]
            for j in range(L):
                if U[j, n] <= 1e-9 and g[j] >= 0.0:
                    continue
                if U[j, n] >= 1.0 - 1e-9 and g[j] <= 0.0:
                    rhs[a] -= H[i, j]
            for b in range(nf):
                M[a, b] = H[i, free[b]]
        sol = np.linalg.solve(M, rhs)
        for a in range(nf):
            out[free[a], n] = sol[a]


def _polish(H, q, U):
    """Re-solve each column exactly on the active set its ADMM iterate suggests.

    A polished column is kept only if it is feasible and has a smaller KKT
    residual.
    """
    out = np.empty_like(U)
    _polish_columns(np.ascontiguousarray(H), np.ascontiguousarray(q),
                    np.ascontiguousarray(U), out)
    feasible = np.all((out >= -1e-12) & (out <= 1.0 + 1e-12), axis=0)
    out = np.clip(out, 0.0, 1.0)
    better = feasible & (_kkt(H, q, out) < _kkt(H, q, U))
    return np.where(better[None, :], out, U)


def _kkt(H, q, U):
    return np.abs(U - np.clip(U - (H @ U - q), 0.0, 1.0)).max(axis=0)


def solve_relaxed_qp(R, Y, mu, anchors, u0=None, dual0=None, rho=None,
                     abs_tol=1e-7, rel_tol=1e-6, max_iter=500,
                     polish=True) -> RelaxedQPResult:
    """Batch ADMM for ``min ||y - R u||^2 + mu ||u - a||^2`` over ``u in [0,1]^L``.

    Every problem shares ``R`` and ``mu``, so ``R'R + (mu + rho) I`` is
    Cholesky-factored once and each iteration is one triangular solve
    against all right-hand sides.  ``rho`` defaults to the geometric mean
    of the extreme eigenvalues of ``R'R + mu I``.  Unconverged columns keep
    their last feasible iterate and are flagged.
    """
    R = np.asarray(R, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    if not mu > 0:
        raise ValueError("relaxed QP needs mu > 0 for strong convexity")
    L, N = Y.shape
    H = R.T @ R + mu * np.eye(L)
    if rho is None:
        ev = np.linalg.eigvalsh(H)
        rho = float(np.sqrt(ev[0] * ev[-1]))
    factor = scipy.linalg.cho_factor(H + rho * np.eye(L))
    q = R.T @ Y + mu * anchors
    v = np.clip(anchors if u0 is None else np.asarray(u0, dtype=np.float64), 0.0, 1.0).copy()
    w = np.zeros((L, N)) if dual0 is None else np.asarray(dual0, dtype=np.float64).copy()
    converged = np.zeros(N, dtype=bool)
    sqrt_l = np.sqrt(L)
    it = 0
    for it in range(1, max_iter + 1):
        u = scipy.linalg.cho_solve(factor, q + rho * (v - w))
        v_old = v
        v = np.clip(u + w, 0.0, 1.0)
        w = w + u - v
        r_pri = np.linalg.norm(u - v, axis=0)
        r_dual = rho * np.linalg.norm(v - v_old, axis=0)
        eps_pri = sqrt_l * abs_tol + rel_tol * np.maximum(np.linalg.norm(u, axis=0),
                                                          np.linalg.norm(v, axis=0))
        eps_dual = sqrt_l * abs_tol + rel_tol * rho * np.linalg.norm(w, axis=0)
        converged = (r_pri <= eps_pri) & (r_dual <= eps_dual)
        if converged.all():
            break
    if polish:
        v = _polish(H, q, v)
    return RelaxedQPResult(v, w, converged, it)


def kkt_residual(R, Y, mu, anchors, U) -> np.ndarray:
    """Projected-gradient residual ``||u - clip(u - grad)||_inf`` per column
    (gradient of half the objective)."""
    R = np.asarray(R, dtype=np.float64)
    H = R.T @ R + mu * np.eye(R.shape[0])
    return _kkt(H, R.T @ Y + mu * np.asarray(anchors, dtype=np.float64), U)


# -- batch drivers used by the trainer --------------------------------------------

@dataclass
class ZStepBatchResult:
    Z: np.ndarray                     # (L, N) uint8
    objective: np.ndarray             # (N,) reduced objective
    stats: dict = field(default_factory=dict)
    relaxed: RelaxedQPResult | None = None


def _keep_warm(R, Y, mu, anchors, Z, warm):
    """Columns where the warm code is at least as good keep the warm code."""
    if warm is None:
        return Z, batch_objective(R, Y, mu, anchors, Z)
    e_new = batch_objective(R, Y, mu, anchors, Z)
    e_warm = batch_objective(R, Y, mu, anchors, warm)
    keep = ~(e_new < e_warm - IMPROVE_RTOL * (1.0 + np.abs(e_warm)))
    Z = np.where(keep[None, :], warm, Z).astype(np.uint8)
    return Z, np.where(keep, e_warm, e_new)


def zstep_exact_batch(R, Y, mu, anchors, warm=None, use_certificates=True,
                      early_abort=True, workers=None) -> ZStepBatchResult:
    R = np.ascontiguousarray(R, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    A = np.ascontiguousarray(anchors, dtype=np.uint8)
    L, N = Y.shape
    if L > MAX_EXACT_BITS:
        raise ValueError(f"exact Z-step limited to L <= {MAX_EXACT_BITS}, got {L}")
    lam, qt = _cert_constants(R, mu)
    Z = np.empty((L, N), dtype=np.uint8)
    S = np.zeros((4, N), dtype=np.int64)
    workers = resolve_workers(workers)
    bounds = chunk_bounds(N, workers * 4 if workers > 1 else 1)
    run_parallel(lambda lh: _exact_batch(R, Y, float(mu), A, lam, qt, use_certificates,
                                         early_abort, Z, S, lh[0], lh[1]),
                 bounds, workers)
    Z, obj = _keep_warm(R, Y, mu, A, Z, warm)
    stats = {"radius": S[0], "evaluated": S[1], "aborted": S[2],
             "certified": S[3] == CERT_SUFFICIENT, "anchor_bound": S[3] == CERT_ANCHOR_BOUND}
    return ZStepBatchResult(Z, obj, stats)


def zstep_inexact_batch(R, Y, mu, anchors, warm, g=1, relaxed: RelaxedQPResult | None = None,
                        max_sweeps=1000, workers=None) -> ZStepBatchResult:
    """Inexact Z-step for all points.  ``relaxed`` warm-starts the ADMM."""
    R = np.ascontiguousarray(R, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    A = np.ascontiguousarray(anchors, dtype=np.uint8)
    W = np.ascontiguousarray(warm, dtype=np.uint8)
    L, N = Y.shape
    if not 1 <= g <= L:
        raise ValueError(f"group size must be in 1..{L}, got {g}")
    qp = solve_relaxed_qp(R, Y, mu, A,
                          u0=None if relaxed is None else relaxed.u,
                          dual0=None if relaxed is None else relaxed.dual)
    U = np.ascontiguousarray(qp.u)
    Z = np.empty((L, N), dtype=np.uint8)
    S = np.zeros((2, N), dtype=np.int64)
    workers = resolve_workers(workers)
    bounds = chunk_bounds(N, workers * 4 if workers > 1 else 1)
    run_parallel(lambda lh: _inexact_batch(R, Y, float(mu), A, U, W, int(g), int(max_sweeps),
                                           Z, S, lh[0], lh[1]),
                 bounds, workers)
    obj = batch_objective(R, Y, mu, A, Z)
    stats = {"from_relaxed": S[0].astype(bool), "sweeps": S[1],
             "qp_converged": qp.converged, "qp_iterations": qp.iterations}
    return ZStepBatchResult(Z, obj, stats, qp)
