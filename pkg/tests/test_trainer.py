import numpy as np
import pytest

from bahash.autoencoder import LinearDecoder, LinearEncoder, encode_bits, f_step
from bahash.baselines import fit_itq, fit_pca, itq_encode
from bahash.data import DataError, FeatureMatrix, normalize, pack_codes
from bahash.synth import axis_gaussian, gaussian_blobs
from bahash.trainer import (
    PenaltySchedule,
    TrainConfig,
    evaluate_penalty,
    init_codes,
    train,
)


def test_schedule():
    assert PenaltySchedule().values()[:3] == [0.01, 0.02, 0.04]
    assert len(PenaltySchedule().values()) == 30
    assert PenaltySchedule(0.5, 2, 4).values(constant=True) == [0.5] * 4
    with pytest.raises(ValueError):
        PenaltySchedule(growth=1.0)


def test_config_validation():
    assert TrainConfig(zstep="group:3").group_size == 3
    assert TrainConfig().group_size is None
    for bad in ("group:0", "greedy", "group:x"):
        with pytest.raises(ValueError):
            TrainConfig(zstep=bad)
    with pytest.raises(ValueError):
        TrainConfig(mode="AE")


def test_fixed_point_terminates_immediately(rng):
    L, D, N = 4, 10, 300
    Z0 = rng.integers(0, 2, size=(L, N), dtype=np.uint8)
    X = normalize(FeatureMatrix(rng.normal(size=(D, L)) @ Z0 + rng.normal(size=(D, 1))))
    res = train(X, pack_codes(Z0), TrainConfig(bits=L, validation=0.0))
    assert res.report.stop_reason == "codes-fixed"
    assert len(res.report.records) == 1
    assert res.report.records[0].e_ba == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_array_equal(res.codes.unpack(), Z0)
    np.testing.assert_array_equal(encode_bits(res.encoder, X), Z0)


def test_bfa_keeps_mu_constant(blobs_small):
    Z0 = init_codes(blobs_small, 6, "tpca")
    cfg = TrainConfig(mode="BFA", bits=6, validation=0.0, schedule=PenaltySchedule(max_iters=6))
    res = train(blobs_small, Z0, cfg)
    assert {r.mu for r in res.report.records} == {0.01}
    # h is fitted to the final free codes at the end
    np.testing.assert_array_equal(res.codes.unpack(), encode_bits(res.encoder, blobs_small))


def test_exact_zstep_never_raises_penalty(blobs_small):
    Z0 = init_codes(blobs_small, 8, "itq")
    res = train(blobs_small, Z0, TrainConfig(bits=8, validation=0.0))
    for r in res.report.records:
        assert r.e_q <= r.e_q_before_z + 1e-9 * (1 + r.e_q_before_z)


def test_codes_fixed_implies_codes_equal_encoder(blobs_small):
    Z0 = init_codes(blobs_small, 8, "itq")
    res = train(blobs_small, Z0, TrainConfig(bits=8, validation=0.0))
    if res.report.stop_reason == "codes-fixed":
        np.testing.assert_array_equal(res.aux_codes.unpack(), res.codes.unpack())


def test_validation_never_below_initial(blobs_small):
    Z0 = init_codes(blobs_small, 8, "random", seed=2)
    res = train(blobs_small, Z0, TrainConfig(bits=8, validation=0.2, val_K=10, val_k=10))
    final = [r.val_precision for r in res.report.records]
    assert res.report.stop_reason in ("codes-fixed", "validation-drop", "max-iters")
    assert max(final) >= res.report.initial_val_precision
    assert len(res.val_idx) == 80 and len(res.train_idx) == 320


def test_training_deterministic_across_workers(blobs_small):
    Z0 = init_codes(blobs_small, 8, "itq")
    a = train(blobs_small, Z0, TrainConfig(bits=8, zstep="group:1", validation=0.0, workers=1))
    b = train(blobs_small, Z0, TrainConfig(bits=8, zstep="group:1", validation=0.0, workers=3))
    assert a.encoder.W.tobytes() == b.encoder.W.tobytes()
    assert a.decoder.A.tobytes() == b.decoder.A.tobytes()
    assert a.codes == b.codes


def test_train_input_checks(blobs_small):
    with pytest.raises(DataError):
        train(blobs_small, init_codes(blobs_small, 4, "tpca"), TrainConfig(bits=5))
    raw = gaussian_blobs(6, 100, seed=1)
    with pytest.warns(UserWarning, match="normalized"):
        train(raw, init_codes(raw, 3, "tpca"),
              TrainConfig(bits=3, validation=0.0, schedule=PenaltySchedule(max_iters=1)))


def test_report_csv(tmp_path, blobs_small):
    res = train(blobs_small, init_codes(blobs_small, 4, "itq"),
                TrainConfig(bits=4, validation=0.0, schedule=PenaltySchedule(max_iters=3)))
    res.report.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("iteration,mu,svm_C,e_q_before_z,e_q,e_ba")
    assert len(lines) == 1 + len(res.report.records)


# -- init_codes ----------------------------------------------------------------

def test_init_tpca_sign_pattern():
    X = axis_gaussian(6, 500, seed=0)
    Z = init_codes(X, 3, "tpca").unpack()
    m = fit_pca(X, 3)
    np.testing.assert_array_equal(Z, (m.project(X) >= 0).astype(np.uint8))


def test_init_random_reproducible(blobs_small):
    a = init_codes(blobs_small, 10, "random", seed=4)
    assert a == init_codes(blobs_small, 10, "random", seed=4)
    assert a != init_codes(blobs_small, 10, "random", seed=5)


def test_init_itq_matches_baseline(blobs_small):
    assert init_codes(blobs_small, 5, "itq", seed=9) == itq_encode(fit_itq(blobs_small, 5, seed=9),
                                                                   blobs_small)
    with pytest.raises(ValueError):
        init_codes(blobs_small, 5, "agh")


# -- evaluate_penalty ------------------------------------------------------------

def _random_model(rng, L, D):
    return (LinearEncoder(rng.normal(size=(L, D)), rng.normal(size=L)),
            LinearDecoder(rng.normal(size=(D, L)), rng.normal(size=D)))


def test_penalty_on_constraint_manifold(rng):
    h, f = _random_model(rng, 5, 4)
    X = rng.normal(size=(4, 30))
    e_q, e_ba, viol = evaluate_penalty(h, f, encode_bits(h, X), X, 3.0)
    assert viol == 0 and e_q == e_ba


def test_penalty_mu_zero_is_bfa_objective(rng):
    h, f = _random_model(rng, 5, 4)
    X = rng.normal(size=(4, 30))
    Z = rng.integers(0, 2, size=(5, 30))
    e_q, _, _ = evaluate_penalty(h, f, Z, X, 0.0)
    assert e_q == pytest.approx(((X - f.A @ Z - f.b[:, None]) ** 2).sum(), rel=1e-12)


def test_penalty_scalar_loop(rng):
    L, D, N = 3, 4, 12
    h, f = _random_model(rng, L, D)
    X = rng.normal(size=(D, N))
    Z = rng.integers(0, 2, size=(L, N))
    mu = 0.7
    e_rec = viol = e_ba = 0.0
    for n in range(N):
        hx = [1 if sum(h.W[l, d] * X[d, n] for d in range(D)) + h.w0[l] >= 0 else 0
              for l in range(L)]
        for d in range(D):
            fz = f.b[d] + sum(f.A[d, l] * Z[l, n] for l in range(L))
            fh = f.b[d] + sum(f.A[d, l] * hx[l] for l in range(L))
            e_rec += (X[d, n] - fz) ** 2
            e_ba += (X[d, n] - fh) ** 2
        viol += sum((Z[l, n] - hx[l]) ** 2 for l in range(L))
    e_q, eb, v = evaluate_penalty(h, f, Z, X, mu)
    assert e_q == pytest.approx(e_rec + mu * viol, abs=1e-9)
    assert eb == pytest.approx(e_ba, abs=1e-9) and v == viol
