import numpy as np
import pytest

from embscope.errors import ConfigError, DataError, DimensionMismatch, NumericError
from embscope.formats import load_model, save_model
from embscope.sae import (
    AdamState,
    SaeConfig,
    SaeModel,
    adam_step,
    dead_neuron_fraction,
    explained_variance,
    lambda_sweep,
    sae_forward,
    sae_grad,
    sae_init,
    sae_loss,
    sae_train,
)
from embscope.synth import SuperpositionSpec, gen_superposition

from .oracles import finite_difference_grad, random_sae, relative_error


def unit_model(dtype=np.float64):
    one = np.ones((1, 1), dtype=dtype)
    zero = np.zeros(1, dtype=dtype)
    return SaeModel(one, zero, one.copy(), zero.copy(), expansion=1)


def test_init_width_and_determinism():
    m = sae_init(384, 8, seed=0)
    assert m.h == 3072
    assert m.W_enc.shape == (384, 3072) and m.W_dec.shape == (3072, 384)
    a, b = sae_init(4, 1, seed=11), sae_init(4, 1, seed=11)
    assert a == b
    assert not np.array_equal(a.W_enc, sae_init(4, 1, seed=12).W_enc)


def test_init_bounds_and_unit_decoder():
    m = sae_init(16, 2, seed=3, dtype=np.float64)
    assert np.all(np.abs(m.W_enc) <= 1 / 4)
    np.testing.assert_allclose(np.linalg.norm(m.W_dec, axis=1), 1.0, atol=1e-6)
    assert not m.b_enc.any() and not m.b_dec.any()


def test_init_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        sae_init(0, 8)


def test_forward_fixed_point(rng):
    m = random_sae(0).replace(b_enc=np.zeros(12))
    F, Xhat = sae_forward(m, m.b_dec[None, :])
    assert not F.any()
    np.testing.assert_array_equal(Xhat[0], m.b_dec)


def test_forward_nonnegative(rng):
    m = random_sae(1)
    F, _ = sae_forward(m, rng.normal(size=(50, 6)) * 5)
    assert F.min() >= 0


def test_forward_unit_model():
    F, Xhat = sae_forward(unit_model(), np.array([[2.0]]))
    assert F[0, 0] == 2.0 and Xhat[0, 0] == 2.0


def test_forward_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        sae_forward(random_sae(0), np.ones((2, 5)))


def test_loss_unit_model():
    assert sae_loss(unit_model(), np.array([[2.0]]), 0.5) == (1.0, 0.0, 1.0)


def test_loss_zero_and_lambda_zero(rng):
    m = random_sae(2)
    zero = m.replace(b_enc=np.full(12, -100.0))
    assert sae_loss(zero, zero.b_dec[None, :], 0.7) == (0.0, 0.0, 0.0)
    X = rng.normal(size=(8, 6))
    total, recon, l1 = sae_loss(m, X, 0.0)
    assert l1 == 0.0 and total == recon
    total, recon, l1 = sae_loss(m, X, 0.3)
    assert total == recon + l1
    with pytest.raises(ConfigError):
        sae_loss(m, X, -0.1)


@pytest.mark.parametrize("seed", range(5))
def test_grad_matches_finite_differences(seed):
    m = random_sae(seed)
    X = np.random.default_rng(100 + seed).normal(size=(8, 6))
    analytic = sae_grad(m, X, 0.3)
    numeric = finite_difference_grad(m, X, 0.3)
    for name in analytic:
        assert relative_error(analytic[name], numeric[name]) < 1e-5, name


def test_grad_zero_at_perfect_fixed_point():
    g = sae_grad(unit_model(), np.array([[2.0]]), 0.0)
    assert all(not v.any() for v in g.values())


def test_grad_invariant_to_row_duplication(rng):
    m = random_sae(3)
    X = rng.normal(size=(8, 6))
    g1 = sae_grad(m, X, 0.2)
    g2 = sae_grad(m, np.vstack([X, X]), 0.2)
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], rtol=1e-12, atol=1e-14)


def test_threaded_grad_matches(rng):
    m = random_sae(4)
    X = rng.normal(size=(64, 6))
    g1 = sae_grad(m, X, 0.2)
    g4 = sae_grad(m, X, 0.2, threads=4)
    for k in g1:
        np.testing.assert_allclose(g1[k], g4[k], rtol=1e-12, atol=1e-14)
    again = sae_grad(m, X, 0.2, threads=4)
    assert all(again[k].tobytes() == g4[k].tobytes() for k in g4)


def test_adam_zero_gradient_keeps_params(rng):
    p = {"w": rng.normal(size=5)}
    state = AdamState.zeros_like(p)
    new, _ = adam_step(p, {"w": np.zeros(5)}, state)
    np.testing.assert_array_equal(new["w"], p["w"])


def test_adam_first_step_formula():
    g = np.array([0.5, -2.0, 1e-3])
    p = {"w": np.zeros(3)}
    lr, eps = 0.01, 1e-8
    new, state = adam_step(p, {"w": g}, AdamState.zeros_like(p), lr=lr, eps=eps)
    # bias-corrected moments after one step are exactly g and g**2
    np.testing.assert_allclose(new["w"], -lr * g / (np.abs(g) + eps), rtol=1e-12)
    assert state.t == 1


def test_adam_constant_gradient_limit():
    g = np.array([3.0, -0.2])
    p = {"w": np.zeros(2)}
    state = AdamState.zeros_like(p)
    prev = p["w"]
    for _ in range(2000):
        p, state = adam_step(p, {"w": g}, state, lr=1e-3)
        step = p["w"] - prev
        prev = p["w"]
    np.testing.assert_allclose(step, -1e-3 * np.sign(g), rtol=1e-6)


def test_adam_rejects_nonfinite():
    p = {"w": np.zeros(2)}
    with pytest.raises(NumericError, match="non-finite"):
        adam_step(p, {"w": np.array([np.nan, 0.0])}, AdamState.zeros_like(p))


def test_explained_variance_cases(rng):
    X = rng.normal(size=(20, 3))
    assert explained_variance(X, X) == 1.0
    assert explained_variance(X, np.broadcast_to(X.mean(0), X.shape)) == pytest.approx(0.0, abs=1e-12)
    assert explained_variance(X, -X) < 0
    with pytest.raises(DataError):
        explained_variance(np.ones((4, 2)), np.ones((4, 2)))


def test_dead_neuron_fraction_cases(rng):
    X = rng.normal(size=(30, 6))
    m = random_sae(5)
    W = m.W_enc.copy()
    W[:, 3] = 0.0
    b = m.b_enc.copy()
    b[3] = -0.1
    m = m.replace(W_enc=W, b_enc=b)
    F, _ = sae_forward(m, X)
    assert not F[:, 3].any()
    expected = np.mean(~(F > 0).any(axis=0))
    assert dead_neuron_fraction(m, X) == expected
    assert expected >= 1 / 12
    dead = m.replace(W_enc=np.zeros((6, 12)), b_enc=np.zeros(12))
    assert dead_neuron_fraction(dead, X) == 1.0


@pytest.fixture(scope="module")
def small_superposition():
    emb, dirs = gen_superposition(SuperpositionSpec(d=16, k=48, p=0.05, n=8000, seed=1))
    return emb, dirs


def _cfg(**kw):
    base = dict(expansion=4, lam=0.1, epochs=15, batch_size=128, lr=3e-3, seed=0)
    base.update(kw)
    return SaeConfig(**base)


def test_train_reconstructs(small_superposition):
    emb, _ = small_superposition
    model, stats = sae_train(emb, _cfg())
    assert stats.final.explained_variance > 0.8
    assert stats.final.total < stats.initial.total
    assert stats.final.explained_variance > stats.initial.explained_variance
    assert stats.final.avg_l0 < model.h
    np.testing.assert_allclose(np.linalg.norm(model.W_dec, axis=1), 1.0, atol=1e-6)
    assert all(0.0 <= e.dead_fraction <= 1.0 and e.explained_variance <= 1.0 for e in stats.epochs)


def test_train_lambda_zero_reconstructs_better(small_superposition):
    emb, _ = small_superposition
    _, s0 = sae_train(emb, _cfg(lam=0.0, epochs=5))
    _, s1 = sae_train(emb, _cfg(lam=1.0, epochs=5))
    assert s0.final.recon < s1.final.recon


def test_train_deterministic(small_superposition):
    emb, _ = small_superposition
    m1, s1 = sae_train(emb, _cfg(epochs=2))
    m2, s2 = sae_train(emb, _cfg(epochs=2))
    assert s1.epochs == s2.epochs
    assert m1 == m2


def test_train_threads_reproducible(small_superposition):
    emb, _ = small_superposition
    m1, s1 = sae_train(emb, _cfg(epochs=1, threads=2))
    m2, s2 = sae_train(emb, _cfg(epochs=1, threads=2))
    assert m1 == m2 and s1.epochs == s2.epochs


def test_train_without_decoder_normalisation(small_superposition):
    emb, _ = small_superposition
    model, _ = sae_train(emb, _cfg(epochs=1, normalize_decoder=False))
    assert np.abs(np.linalg.norm(model.W_dec, axis=1) - 1).max() > 1e-6


def test_train_center_sets_decoder_bias(small_superposition):
    emb, _ = small_superposition
    model, stats = sae_train(emb, _cfg(epochs=1, center=True))
    assert np.abs(model.b_dec).max() > 0


def test_train_rejects_bad_config(small_superposition):
    emb, _ = small_superposition
    with pytest.raises(ConfigError):
        sae_train(emb, _cfg(batch_size=100_000))
    with pytest.raises(ConfigError):
        sae_train(emb, _cfg(lam=-1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_overflow_reports_numeric_error(rng):
    X = rng.normal(size=(64, 4)) * 1e20
    with pytest.raises(NumericError, match="epoch 1"):
        sae_train(X, SaeConfig(expansion=1, epochs=1, batch_size=16, holdout_fraction=0))


def test_lambda_sweep_trends(small_superposition):
    emb, _ = small_superposition
    rows = [r for r, _ in lambda_sweep(emb, _cfg(epochs=8), [0.1, 0.5, 2.0])]
    l0 = [r.avg_l0 for r in rows]
    ev = [r.explained_variance for r in rows]
    assert l0 == sorted(l0, reverse=True)
    assert all(b <= a + 0.02 for a, b in zip(ev, ev[1:]))


def test_lambda_sweep_needs_two_values(small_superposition):
    with pytest.raises(ConfigError):
        lambda_sweep(small_superposition[0], _cfg(), [0.5])


def test_sae_artifact_round_trip(tmp_path):
    m = sae_init(384, 8, seed=1)
    m.lam = 0.5
    save_model(m.to_artifact(), tmp_path / "s.mdl")
    back = SaeModel.from_artifact(load_model(tmp_path / "s.mdl", "sae"))
    assert back == m
    assert back.W_dec.tobytes() == m.W_dec.tobytes()
    with pytest.raises(Exception):
        load_model(tmp_path / "s.mdl", "probe")
