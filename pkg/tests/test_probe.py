import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from embscope.data import SplitSpec, TargetTable, validate_embedding_matrix
from embscope.errors import ConfigError, DataError, DimensionMismatch
from embscope.formats import load_model, save_model
from embscope.probe import (
    LinearProbe,
    ProbeReport,
    cross_domain_eval,
    fit_lasso,
    fit_ridge,
    kkt_residual,
    pearson_r,
    predict,
    probe_experiment,
    top_coefficients,
)
from embscope.synth import PlantedLinearSpec, gen_domain_pair, gen_planted_linear, noise_for_snr, permute_dims


def orthonormal_design(rng, n=64, d=16):
    """Columns with zero mean and Z'Z/N = I, so standardisation leaves them unchanged."""
    A = rng.standard_normal((n, d))
    A -= A.mean(axis=0)
    Q, _ = np.linalg.qr(A)
    return Q * np.sqrt(n)


def lasso_oracle_orthonormal(Z, y, alpha):
    ols, *_ = np.linalg.lstsq(Z, y - y.mean(), rcond=None)
    return np.sign(ols) * np.maximum(np.abs(ols) - alpha, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_lasso_matches_soft_thresholded_ols(seed):
    rng = np.random.default_rng(seed)
    Z = orthonormal_design(rng)
    y = Z @ rng.normal(scale=0.3, size=16) + 0.1 * rng.standard_normal(64) + 5.0
    probe = fit_lasso(Z, y, alpha=0.1)
    np.testing.assert_allclose(probe.feature_stds, 1.0, rtol=1e-12)
    np.testing.assert_allclose(probe.weights, lasso_oracle_orthonormal(Z, y, 0.1), atol=1e-6)
    assert kkt_residual(probe, Z, y) <= 1e-6


def test_lasso_orthonormal_frozen_case():
    # 4x2 design with Z'Z/N = I; OLS = (1.5, -0.25); soft threshold at 0.5 by hand
    Z = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    y = 1.5 * Z[:, 0] - 0.25 * Z[:, 1] + 2.0
    probe = fit_lasso(Z, y, alpha=0.5)
    np.testing.assert_allclose(probe.weights, [1.0, 0.0], atol=1e-12)
    assert probe.weights[1] == 0.0
    assert probe.target_mean == 2.0


def test_lasso_null_solution(rng):
    X = rng.standard_normal((200, 10))
    y = X[:, 0] + rng.standard_normal(200)
    Z = (X - X.mean(0)) / X.std(0)
    alpha_max = np.max(np.abs(Z.T @ (y - y.mean()))) / 200
    probe = fit_lasso(X, y, alpha=alpha_max * 1.0001)
    assert probe.n_nonzero == 0
    assert np.all(probe.weights == 0.0)
    assert fit_lasso(X, y, alpha=alpha_max * 0.99).n_nonzero == 1


@pytest.mark.parametrize("seed", range(4))
def test_lasso_kkt_general_design(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((500, 50)) @ rng.normal(size=(50, 50)) * 0.3
    y = X[:, :5].sum(axis=1) + rng.standard_normal(500)
    probe = fit_lasso(X, y, alpha=0.05)
    assert probe.meta["converged"]
    assert kkt_residual(probe, X, y) <= 1e-6


def test_lasso_monotone_sparsity(rng):
    X = rng.standard_normal((1000, 40))
    y = X[:, :10] @ np.linspace(0.2, 2.0, 10) + rng.standard_normal(1000)
    counts = [fit_lasso(X, y, a).n_nonzero for a in (0.001, 0.01, 0.05, 0.1, 0.3, 0.6, 1.0, 2.0)]
    assert counts == sorted(counts, reverse=True)
    assert counts[0] > counts[-1]


def test_constant_column_pinned(rng):
    X = rng.standard_normal((100, 3))
    X[:, 1] = 7.0
    y = X[:, 0] + X[:, 2]
    for fit in (fit_lasso, fit_ridge):
        probe = fit(X, y, 0.01)
        assert probe.weights[1] == 0.0
        assert probe.feature_stds[1] == 1.0
        assert np.all(probe.feature_stds > 0)


def test_constant_target_rejected(rng):
    X = rng.standard_normal((10, 3))
    with pytest.raises(DataError, match="variation"):
        fit_lasso(X, np.ones(10), 0.1)
    with pytest.raises(DataError):
        fit_lasso(X[:1], np.ones(1), 0.1)
    with pytest.raises(ConfigError):
        fit_lasso(X, np.arange(10.0), -0.1)


def test_noiseless_planted_recovery():
    emb, tgt, truth = gen_planted_linear(PlantedLinearSpec(n=500, d=20, s=5, seed=3))
    y = tgt.columns["y"]
    probe = fit_lasso(emb, y, alpha=1e-9, config=__import__("embscope").CDConfig(tol=1e-12))
    # weights live in standardised units: raw slope = w / std
    raw = probe.weights / probe.feature_stds
    np.testing.assert_allclose(raw, truth.dense(), atol=1e-4)
    assert pearson_r(y, predict(probe, emb)) == pytest.approx(1.0, abs=1e-9)


def test_ridge_zero_alpha_is_least_squares(rng):
    X = rng.standard_normal((80, 6))
    y = X @ rng.normal(size=6) + 0.5 * rng.standard_normal(80) + 1.0
    probe = fit_ridge(X, y, 0.0)
    A = np.column_stack([X, np.ones(80)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    np.testing.assert_allclose(predict(probe, X), A @ coef, atol=1e-8)
    np.testing.assert_allclose(probe.weights / probe.feature_stds, coef[:6], atol=1e-8)


def test_ridge_huge_alpha_shrinks_to_mean(rng):
    X = rng.standard_normal((50, 4))
    y = X[:, 0] + 3.0
    probe = fit_ridge(X, y, 1e12)
    assert np.linalg.norm(probe.weights) < 1e-10
    np.testing.assert_allclose(predict(probe, X), y.mean(), atol=1e-9)


def test_ridge_orthonormal_first_feature(rng):
    Z = orthonormal_design(rng, n=64, d=8)
    alpha = 0.25
    probe = fit_ridge(Z, Z[:, 0], alpha)
    direct = np.linalg.solve(Z.T @ Z + 2 * 64 * alpha * np.eye(8), Z.T @ Z[:, 0])
    np.testing.assert_allclose(probe.weights, direct, atol=1e-12)
    np.testing.assert_allclose(probe.weights, np.eye(8)[0] / (1 + 2 * alpha), atol=1e-12)


def test_ridge_reproducible(rng):
    X = rng.standard_normal((60, 5))
    y = X[:, 0] + rng.standard_normal(60)
    assert fit_ridge(X, y, 0.1).weights.tobytes() == fit_ridge(X, y, 0.1).weights.tobytes()


def test_predict_zero_weights_and_dim_check(rng):
    probe = LinearProbe(np.zeros(384), 0.5, np.zeros(384), np.ones(384), 2.0, "L1", 0.1)
    out = predict(probe, rng.standard_normal((5, 384)))
    np.testing.assert_array_equal(out, 2.5)
    with pytest.raises(DimensionMismatch):
        predict(probe, rng.standard_normal((5, 383)))


def test_pearson_examples():
    a = np.array([1.0, 2.0, 4.0, 8.0])
    assert pearson_r(a, 2 * a + 3) == pytest.approx(1.0, abs=1e-15)
    assert pearson_r(a, -a) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(DataError):
        pearson_r(np.ones(4), a)
    with pytest.raises(DimensionMismatch):
        pearson_r(a, a[:3])


@settings(max_examples=50)
@given(st.integers(0, 2**31), st.floats(0.01, 100), st.floats(-100, 100))
def test_pearson_affine_invariance_and_scipy(seed, scale, shift):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(30), rng.standard_normal(30)
    r = pearson_r(a, b)
    assert r == pytest.approx(stats.pearsonr(a, b)[0], abs=1e-12)
    assert pearson_r(scale * a + shift, b) == pytest.approx(r, abs=1e-12)


def _planted(seed, n=10_000, d=64, s=8, snr=10.0):
    spec = PlantedLinearSpec(n=n, d=d, s=s, seed=seed).resolved()
    from dataclasses import replace
    return replace(spec, noise_sigma=noise_for_snr(spec.true_weights, snr))


def test_probe_experiment_planted():
    spec = _planted(0, n=5000)
    emb, tgt, truth = gen_planted_linear(spec)
    report, probe = probe_experiment(emb, tgt, "y", "L1", 0.1, SplitSpec(0.2, 0))
    assert set(np.flatnonzero(probe.weights)) == set(truth.support)
    assert report.pearson_r_test > 0.94
    assert (report.n_train, report.n_test) == (4000, 1000)


def test_probe_experiment_deterministic():
    emb, tgt, _ = gen_planted_linear(_planted(1, n=2000))
    a = probe_experiment(emb, tgt, "y", "L1", 0.1, SplitSpec(0.2, 5))
    b = probe_experiment(emb, tgt, "y", "L1", 0.1, SplitSpec(0.2, 5))
    assert a[0] == b[0]
    assert a[1].weights.tobytes() == b[1].weights.tobytes()


def test_probe_experiment_null_target():
    rs = []
    for seed in range(20):
        emb, tgt, _ = gen_planted_linear(PlantedLinearSpec(n=10_000, d=64, s=0, noise_sigma=1.0, seed=seed))
        report, _ = probe_experiment(emb, tgt, "y", "L1", 0.1, SplitSpec(0.2, seed))
        assert report.constant_prediction == (report.n_nonzero == 0)
        rs.append(report.pearson_r_test)
    assert max(abs(r) for r in rs) < 0.1


def test_probe_experiment_drops_missing_rows(rng):
    emb = validate_embedding_matrix(rng.standard_normal((50, 3)), [f"s{i}" for i in range(50)])
    y = emb.as_float64()[:, 0] * 2 + 0.1 * rng.standard_normal(50)
    y[:10] = np.nan
    tgt = TargetTable(emb.ids, {"t": y})
    report, _ = probe_experiment(emb, tgt, "t", "L2", 0.01, SplitSpec(0.2, 0))
    assert report.n_train + report.n_test == 40


def test_cross_domain_transfer_and_permuted_control():
    spec = _planted(2, n=5000)
    (ea, ta), (eb, tb), _ = gen_domain_pair(spec, noise_b=1.5 * spec.noise_sigma, shift_b=0.5)
    _, probe_a = probe_experiment(ea, ta, "y", "L1", 0.1, SplitSpec(0.2, 0))
    in_domain, _ = probe_experiment(eb, tb, "y", "L1", 0.1, SplitSpec(0.2, 0))
    transfer = cross_domain_eval(probe_a, eb, tb)
    assert abs(transfer.pearson_r_test - in_domain.pearson_r_test) < 0.05
    control = cross_domain_eval(probe_a, permute_dims(eb, 0), tb)
    assert abs(control.pearson_r_test) < 0.2


def test_cross_domain_mismatch(rng):
    emb, tgt, _ = gen_planted_linear(PlantedLinearSpec(n=100, d=8, s=2, noise_sigma=0.1))
    probe = fit_lasso(emb, tgt.columns["y"], 0.1, target_name="y")
    other = validate_embedding_matrix(rng.standard_normal((5, 7)), list("abcde"))
    with pytest.raises(DimensionMismatch):
        cross_domain_eval(probe, other, tgt)
    with pytest.raises(DataError):
        cross_domain_eval(probe, emb, tgt, "missing_col")


def test_top_coefficients():
    probe = LinearProbe(np.array([0.0, 3.0, -5.0]), 0.0, np.zeros(3), np.ones(3), 0.0, "L1", 0.1)
    assert top_coefficients(probe, 2) == [(2, -5.0), (1, 3.0)]
    zero = LinearProbe(np.zeros(3), 0.0, np.zeros(3), np.ones(3), 0.0, "L1", 0.1)
    assert top_coefficients(zero, 1) == [(0, 0.0)]
    with pytest.raises(ConfigError):
        top_coefficients(zero, 0)


def test_top_coefficients_cover_planted_support():
    emb, tgt, truth = gen_planted_linear(_planted(4, n=3000))
    probe = fit_lasso(emb, tgt.columns["y"], 0.1)
    top = {j for j, _ in top_coefficients(probe, len(truth.support))}
    assert top >= set(truth.support)


def test_probe_artifact_round_trip(tmp_path, rng):
    X = rng.standard_normal((500, 384))
    probe = fit_lasso(X, X[:, :3].sum(1) + rng.standard_normal(500), 0.1, target_name="area")
    save_model(probe.to_artifact(), tmp_path / "p.mdl")
    back = LinearProbe.from_artifact(load_model(tmp_path / "p.mdl", "probe"))
    assert back == probe
    assert back.weights.tobytes() == probe.weights.tobytes()


def test_report_text_round_trip():
    r = ProbeReport("area", 0.6812345678901234, 42, 384, 800, 200, 7, "L1", 0.1)
    text = r.to_text()
    assert "pearson_r_test=0.6812345678901234\n" in text
    assert ProbeReport.from_text(text) == r
    r = ProbeReport("noise", 0.0, 0, 64, 800, 200, None, "L2", 0.5, constant_prediction=True)
    assert ProbeReport.from_text(r.to_text()) == r
