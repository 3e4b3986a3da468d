import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from embscope import _kernels

BACKENDS = [_kernels.fallback] + ([_kernels.compiled] if _kernels.compiled is not None else [])
backend_ids = [b.__name__.rsplit(".", 1)[-1] for b in BACKENDS]


@pytest.fixture(params=BACKENDS, ids=backend_ids)
def kernel(request):
    return request.param


@pytest.mark.parametrize("z, gamma, expected", [(3.0, 1.0, 2.0), (-0.5, 1.0, 0.0), (-3.0, 1.0, -2.0), (1.0, 1.0, 0.0)])
def test_soft_threshold_values(kernel, z, gamma, expected):
    assert kernel.soft_threshold(z, gamma) == expected


@given(st.floats(-1e6, 1e6), st.floats(0, 1e6))
def test_soft_threshold_formula(z, gamma):
    expected = np.sign(z) * max(abs(z) - gamma, 0.0)
    for k in BACKENDS:
        assert k.soft_threshold(z, gamma) == pytest.approx(expected, rel=0, abs=1e-9 * max(1.0, abs(z)))
        assert k.soft_threshold(z, 0.0) == z


def _problem(seed, n=300, d=40):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    X[:, 1] += 0.7 * X[:, 0]
    y = X[:, :6] @ rng.normal(size=6) + rng.standard_normal(n)
    Z = (X - X.mean(0)) / X.std(0)
    gram = np.ascontiguousarray(Z.T @ Z / n)
    corr = Z.T @ (y - y.mean()) / n
    return gram, corr


def test_cd_converges(kernel):
    gram, corr = _problem(0)
    w = np.zeros(gram.shape[0])
    sweeps, delta = kernel.cd_gram(gram, corr, 0.05, w, 1e-10, 1000)
    assert delta < 1e-10 and sweeps < 1000
    # stationarity of the smooth part on the active set
    g = corr - gram @ w
    active = w != 0
    np.testing.assert_allclose(g[active], 0.05 * np.sign(w[active]), atol=1e-8)
    assert np.all(np.abs(g[~active]) <= 0.05 + 1e-8)


def test_cd_sweep_cap(kernel):
    gram, corr = _problem(1)
    w = np.zeros(gram.shape[0])
    sweeps, _ = kernel.cd_gram(gram, corr, 0.001, w, 0.0, 3)
    assert sweeps == 3


def test_cd_skips_zero_diagonal(kernel):
    gram = np.diag([1.0, 0.0, 1.0])
    w = np.zeros(3)
    kernel.cd_gram(gram, np.array([0.5, 0.7, -0.2]), 0.1, w, 1e-12, 100)
    np.testing.assert_allclose(w, [0.4, 0.0, -0.1])


@pytest.mark.skipif(_kernels.compiled is None, reason="compiled kernel not built")
@pytest.mark.parametrize("seed", range(5))
def test_backends_bit_identical(seed):
    gram, corr = _problem(seed, d=60)
    w_c = np.zeros(60)
    w_p = np.zeros(60)
    w_c[3] = w_p[3] = 0.25  # warm start exercises the initial residual pass
    r_c = _kernels.compiled.cd_gram(gram, corr, 0.02, w_c, 1e-9, 1000)
    r_p = _kernels.fallback.cd_gram(gram, corr, 0.02, w_p, 1e-9, 1000)
    assert r_c == r_p
    assert w_c.tobytes() == w_p.tobytes()


def test_backend_selection_reported():
    assert _kernels.BACKEND in ("cython", "python")
    if _kernels.compiled is not None:
        assert _kernels.cd_gram is _kernels.compiled.cd_gram
