import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bahash.autoencoder import (
    LinearDecoder,
    LinearEncoder,
    SvmConfig,
    decode,
    encode,
    encode_bits,
    f_step,
    h_step,
    load_model,
    reconstruction_error,
    save_model,
)
from bahash.data import DataError, Normalization, pack_codes
from bahash.svm import augment, primal_objective

from oracles import normal_equations_decoder, svm_primal_cvxpy


def full_rank_codes(rng, L, N):
    while True:
        Z = rng.integers(0, 2, size=(L, N), dtype=np.uint8)
        Za = np.vstack([Z, np.ones((1, N))])
        if np.linalg.matrix_rank(Za) == L + 1:
            return Z


# -- f-step --------------------------------------------------------------------

def test_f_step_recovers_exact_decoder(rng):
    L, D, N = 6, 9, 60
    Z = full_rank_codes(rng, L, N)
    A0, b0 = rng.normal(size=(D, L)), rng.normal(size=D)
    X = A0 @ Z + b0[:, None]
    f = f_step(Z, X)
    np.testing.assert_allclose(f.A, A0, atol=1e-8)
    np.testing.assert_allclose(f.b, b0, atol=1e-8)
    assert reconstruction_error(f, Z, X) <= 1e-16 * N * D + 1e-12


def test_f_step_all_zero_codes(rng):
    X = rng.normal(size=(4, 20))
    f = f_step(np.zeros((3, 20), dtype=np.uint8), X)
    np.testing.assert_allclose(f.A, 0, atol=1e-12)
    np.testing.assert_allclose(f.b, X.mean(axis=1), atol=1e-12)


def test_f_step_matches_normal_equations(rng):
    Z = full_rank_codes(rng, 5, 12)
    X = rng.normal(size=(7, 12))
    f = f_step(Z, X)
    A, b = normal_equations_decoder(Z, X)
    np.testing.assert_allclose(f.A, A, atol=1e-9)
    np.testing.assert_allclose(f.b, b, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_f_step_first_order_optimality(L, D, seed):
    rng = np.random.default_rng(seed)
    N = L + 1 + int(rng.integers(0, 30))
    Z = rng.integers(0, 2, size=(L, N), dtype=np.uint8)
    X = rng.normal(size=(D, N))
    f = f_step(Z, X)
    res = X - f.A @ Z - f.b[:, None]
    gA = -2 * res @ Z.T
    gb = -2 * res.sum(axis=1)
    assert np.abs(gA).max() <= 1e-8 * max(1.0, np.linalg.norm(X)) * N
    assert np.abs(gb).max() <= 1e-8 * max(1.0, np.linalg.norm(X)) * N


def test_f_step_underdetermined_warns(rng):
    with pytest.warns(UserWarning, match="underdetermined"):
        f_step(rng.integers(0, 2, size=(6, 4)), rng.normal(size=(3, 4)))


def test_f_step_size_mismatch(rng):
    with pytest.raises(DataError):
        f_step(np.zeros((2, 5)), rng.normal(size=(3, 4)))


# -- h-step --------------------------------------------------------------------

def test_h_step_separable_clouds(rng):
    left = rng.normal(size=(2, 40)) + np.array([[-5.0], [0.0]])
    right = rng.normal(size=(2, 40)) + np.array([[5.0], [0.0]])
    X = np.hstack([left, right])
    Z = np.array([[0] * 40 + [1] * 40], dtype=np.uint8)
    for C in (1.0, 100.0):
        h = h_step(X, Z, SvmConfig(C=C))
        np.testing.assert_array_equal(encode_bits(h, X), Z)


def test_h_step_constant_bit(rng):
    X = rng.normal(size=(3, 30))
    Z = np.vstack([np.ones(30), np.zeros(30), rng.integers(0, 2, 30)]).astype(np.uint8)
    h = h_step(X, Z)
    np.testing.assert_array_equal(h.W[0], 0)
    np.testing.assert_array_equal(h.W[1], 0)
    assert h.w0[0] > 0 and h.w0[1] < 0
    out = encode_bits(h, rng.normal(size=(3, 50)) * 100)
    assert out[0].all() and not out[1].any()


def test_h_step_matches_convex_oracle(rng):
    pytest.importorskip("cvxpy")
    X = rng.normal(size=(2, 80))
    labels = (X[0] + 0.5 * X[1] + 0.4 * rng.normal(size=80) > 0).astype(np.uint8)
    C = 100.0
    h = h_step(X, labels[None, :], SvmConfig(C=C, tol=1e-6, max_passes=100000))
    Xa = augment(X)
    y = 2.0 * labels - 1.0
    ours = primal_objective(np.append(h.W[0], h.w0[0]), Xa, y, C)
    _, ref = svm_primal_cvxpy(Xa, y, C)
    assert ours == pytest.approx(ref, rel=1e-4)


def test_h_step_warm_start_never_worse(rng):
    X = rng.normal(size=(5, 120))
    Z = (rng.normal(size=(4, 5)) @ X + rng.normal(size=(4, 120)) > 0).astype(np.uint8)
    cfg = SvmConfig(C=10.0, tol=1e-2, max_passes=3)
    cold = h_step(X, Z, SvmConfig(C=10.0, tol=1e-8, max_passes=5000))
    warm = h_step(X, Z, cfg, warm=cold)
    Xa = augment(X)
    for l in range(4):
        y = 2.0 * Z[l] - 1.0
        w_cold = np.append(cold.W[l], cold.w0[l])
        w_warm = np.append(warm.W[l], warm.w0[l])
        assert primal_objective(w_warm, Xa, y, 10.0) <= primal_objective(w_cold, Xa, y, 10.0) + 1e-9


def test_h_step_separable_reproduces_codes(rng):
    X = rng.normal(size=(6, 200))
    W = rng.normal(size=(3, 6))
    Z = (W @ X >= 0).astype(np.uint8)
    C = 1.0
    while True:
        h = h_step(X, Z, SvmConfig(C=C, tol=1e-6, max_passes=20000))
        if np.array_equal(encode_bits(h, X), Z) or C > 1e6:
            break
        C *= 10
    np.testing.assert_array_equal(encode_bits(h, X), Z)


def test_h_step_bits_independent(rng):
    X = rng.normal(size=(4, 60))
    Z = rng.integers(0, 2, size=(5, 60), dtype=np.uint8)
    perm = np.array([3, 0, 4, 1, 2])
    h = h_step(X, Z)
    hp = h_step(X, Z[perm])
    assert hp.W.tobytes() == h.W[perm].tobytes()
    assert hp.w0.tobytes() == h.w0[perm].tobytes()


def test_h_step_worker_count_invariant(rng):
    X = rng.normal(size=(4, 90))
    Z = rng.integers(0, 2, size=(6, 90), dtype=np.uint8)
    a = h_step(X, Z, workers=1)
    b = h_step(X, Z, workers=3)
    assert a.W.tobytes() == b.W.tobytes() and a.w0.tobytes() == b.w0.tobytes()


# -- encode / decode -----------------------------------------------------------

def test_encode_sign_readout():
    h = LinearEncoder(np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(encode_bits(h, np.array([[-1.0], [2.0]]))[:, 0], [0, 1])


def test_encode_boundary_is_one():
    h = LinearEncoder(np.array([[1.0, -1.0]]), np.array([0.0]))
    assert encode_bits(h, np.array([[3.0], [3.0]]))[0, 0] == 1


def test_encode_scalar_oracle(rng):
    W, w0 = rng.normal(size=(7, 5)), rng.normal(size=7)
    X = rng.normal(size=(5, 30))
    Z = encode(LinearEncoder(W, w0), X).unpack()
    for n in range(30):
        for l in range(7):
            t = sum(W[l, d] * X[d, n] for d in range(5)) + w0[l]
            assert Z[l, n] == (1 if t >= 0 else 0)


def test_decode_examples(rng):
    A, b = rng.normal(size=(4, 3)), rng.normal(size=4)
    f = LinearDecoder(A, b)
    Z = np.array([[0, 0, 1], [0, 1, 0], [0, 0, 0]], dtype=np.uint8)
    out = decode(f, Z)
    np.testing.assert_array_equal(out[:, 0], b)
    np.testing.assert_allclose(out[:, 1], A[:, 1] + b)
    np.testing.assert_allclose(out[:, 2], A[:, 0] + b)


def test_decode_dense_oracle(rng):
    A, b = rng.normal(size=(6, 10)), rng.normal(size=6)
    Z = rng.integers(0, 2, size=(10, 200), dtype=np.uint8)
    np.testing.assert_allclose(decode(LinearDecoder(A, b), pack_codes(Z)),
                               A @ Z + b[:, None], atol=1e-12)


def test_model_file_round_trip(tmp_path, rng):
    h = LinearEncoder(rng.normal(size=(3, 5)), rng.normal(size=3))
    f = LinearDecoder(rng.normal(size=(5, 3)), rng.normal(size=5))
    norm = Normalization(rng.normal(size=5), 2.5)
    save_model(tmp_path / "m.bhm", h, f, norm)
    h2, f2, n2 = load_model(tmp_path / "m.bhm")
    assert h2.W.tobytes() == h.W.tobytes() and h2.w0.tobytes() == h.w0.tobytes()
    assert f2.A.tobytes() == f.A.tobytes() and f2.b.tobytes() == f.b.tobytes()
    assert n2.scale == 2.5 and n2.mean.tobytes() == norm.mean.tobytes()
    assert (tmp_path / "m.bhm").read_text().startswith("BHM1 3 5\n")
    save_model(tmp_path / "n.bhm", h)
    assert load_model(tmp_path / "n.bhm")[2] is None


def test_model_file_errors(tmp_path):
    p = tmp_path / "bad.bhm"
    p.write_text("BHM1 2 2\n1 2\n")
    with pytest.raises(DataError):
        load_model(p)
    with pytest.raises(DataError):
        load_model(tmp_path / "missing.bhm")
