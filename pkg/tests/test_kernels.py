import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agdst import kernels


def _tol(dtype):
    return dict(rtol=1e-4, atol=1e-5) if dtype == np.float32 else dict(rtol=1e-10, atol=1e-12)


DTYPES = [np.float32, np.float64]


def _rng(seed=0):
    return np.random.default_rng(seed)


def test_python_backend_always_available():
    assert "python" in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@pytest.mark.parametrize("dtype", DTYPES)
def test_layer_norm_oracle(backend, dtype):
    x = _rng(1).normal(size=(5, 7)).astype(dtype)
    g = _rng(2).normal(size=7).astype(dtype)
    b = _rng(3).normal(size=7).astype(dtype)
    y, xhat, rstd = kernels.layer_norm_fwd(x, g, b, 1e-5)
    for i in range(5):
        row = [float(v) for v in x[i]]
        mu = sum(row) / 7
        var = sum((v - mu) ** 2 for v in row) / 7
        r = 1 / math.sqrt(var + 1e-5)
        want = [(v - mu) * r * float(g[j]) + float(b[j]) for j, v in enumerate(row)]
        np.testing.assert_allclose(y[i], want, **_tol(dtype))
        assert rstd[i] == pytest.approx(r, rel=1e-5)
    assert y.dtype == dtype


def test_layer_norm_bwd_finite_difference(backend):
    rng = _rng(4)
    x = rng.normal(size=(3, 6))
    g = rng.normal(size=6)
    b = rng.normal(size=6)
    dy = rng.normal(size=(3, 6))
    _, xhat, rstd = kernels.layer_norm_fwd(x, g, b, 1e-5)
    dx, dg, db = kernels.layer_norm_bwd(dy, xhat, rstd, g)
    f = lambda xx, gg, bb: float(np.sum(kernels.layer_norm_fwd(xx, gg, bb, 1e-5)[0] * dy))
    h = 1e-6
    for arr, grad in ((x, dx), (g, dg), (b, db)):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            up = f(x, g, b)
            arr[idx] = old - h
            dn = f(x, g, b)
            arr[idx] = old
            assert grad[idx] == pytest.approx((up - dn) / (2 * h), abs=1e-6)


@pytest.mark.parametrize("dtype", DTYPES)
def test_causal_softmax_oracle(backend, dtype):
    s = _rng(5).normal(size=(2, 4, 4)).astype(dtype)
    p = kernels.causal_softmax_fwd(s)
    for m in range(2):
        for i in range(4):
            e = [math.exp(float(s[m, i, j])) for j in range(i + 1)]
            z = sum(e)
            np.testing.assert_allclose(p[m, i, : i + 1], [v / z for v in e], **_tol(dtype))
            assert np.all(p[m, i, i + 1:] == 0)


def test_causal_softmax_rows_and_bwd(backend):
    rng = _rng(6)
    s = rng.normal(size=(3, 5, 5)) * 10
    p = kernels.causal_softmax_fwd(s)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)
    dp = rng.normal(size=p.shape)
    ds = kernels.causal_softmax_bwd(dp, p)
    h = 1e-6
    for idx in [(0, 3, 1), (2, 4, 4), (1, 2, 0)]:
        s2 = s.copy()
        s2[idx] += h
        up = np.sum(kernels.causal_softmax_fwd(s2) * dp)
        s2[idx] -= 2 * h
        dn = np.sum(kernels.causal_softmax_fwd(s2) * dp)
        assert ds[idx] == pytest.approx((up - dn) / (2 * h), abs=1e-6)


def test_causal_softmax_extreme_scores(backend):
    s = np.array([[[1e4, -1e4], [-1e4, 1e4]]])
    p = kernels.causal_softmax_fwd(s)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p[0], [[1, 0], [0, 1]])


def test_gelu_oracle_and_bwd(backend):
    u = np.linspace(-4, 4, 17)
    out = kernels.gelu_fwd(u)
    for a, b in zip(u, out):
        a = float(a)
        want = 0.5 * a * (1 + math.tanh(math.sqrt(2 / math.pi) * (a + 0.044715 * a ** 3)))
        assert b == pytest.approx(want, rel=1e-12, abs=1e-15)
    dg = np.ones_like(u)
    h = 1e-6
    fd = (kernels.gelu_fwd(u + h) - kernels.gelu_fwd(u - h)) / (2 * h)
    np.testing.assert_allclose(kernels.gelu_bwd(dg, u), fd, atol=1e-7)


@pytest.mark.parametrize("dtype", DTYPES)
def test_xent_oracle(backend, dtype):
    logits = _rng(7).normal(size=(4, 6)).astype(dtype) * 3
    targets = np.array([0, 5, 2, 2])
    weights = np.array([1.0, 0.5, 0.0, 2.0], dtype=dtype)
    nll, grad = kernels.xent_fwd_bwd(logits, targets, weights)
    for i in range(4):
        row = [float(v) for v in logits[i]]
        lse = math.log(sum(math.exp(v) for v in row))
        assert nll[i] == pytest.approx(lse - row[targets[i]], rel=1e-5)
        probs = [math.exp(v - lse) for v in row]
        probs[targets[i]] -= 1
        np.testing.assert_allclose(grad[i], [float(weights[i]) * q for q in probs], **_tol(dtype))
    assert np.all(grad[2] == 0)


def test_scatter_add_repeated_index(backend):
    out = np.zeros((4, 3))
    src = np.arange(15, dtype=float).reshape(5, 3)
    kernels.scatter_add_rows(out, np.array([1, 1, 3, 0, 1]), src)
    want = np.zeros((4, 3))
    for r, i in enumerate([1, 1, 3, 0, 1]):
        want[i] += src[r]
    np.testing.assert_array_equal(out, want)


@pytest.mark.parametrize("a,b,d", [
    ("", "", 0), ("abc", "", 3), ("kitten", "sitting", 3),
    ("cambots", "camboats", 1), ("cambridge lodge lodge", "cambridge lodge", 6),
])
def test_edit_distance_examples(backend, a, b, d):
    assert kernels.edit_distance(a, b) == d
    assert kernels.edit_distance(b, a) == d


def _naive_edit(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(_naive_edit(a[1:], b) + 1, _naive_edit(a, b[1:]) + 1, _naive_edit(a[1:], b[1:]) + (a[0] != b[0]))


@given(st.text("abc ", max_size=6), st.text("abc ", max_size=6))
@settings(max_examples=200)
def test_edit_distance_matches_recursive_oracle(a, b):
    for name in kernels.available_backends():
        assert kernels.get_backend(name).edit_distance(a, b) == _naive_edit(a, b)


@pytest.mark.skipif("compiled" not in kernels.available_backends(), reason="extension not built")
@pytest.mark.parametrize("dtype", DTYPES)
def test_backends_agree(dtype):
    py, c = kernels.get_backend("python"), kernels.get_backend("compiled")
    rng = _rng(8)
    tol = _tol(dtype)
    x = rng.normal(size=(9, 16)).astype(dtype)
    g = rng.normal(size=16).astype(dtype)
    b = rng.normal(size=16).astype(dtype)
    ra, rb = py.layer_norm_fwd(x, g, b, 1e-5), c.layer_norm_fwd(x, g, b, 1e-5)
    for u, v in zip(ra, rb):
        np.testing.assert_allclose(u, v, **tol)
    dy = rng.normal(size=x.shape).astype(dtype)
    for u, v in zip(py.layer_norm_bwd(dy, ra[1], ra[2], g), c.layer_norm_bwd(dy, ra[1], ra[2], g)):
        np.testing.assert_allclose(u, v, **tol)
    s = rng.normal(size=(2, 3, 8, 8)).astype(dtype)
    p = py.causal_softmax_fwd(s)
    np.testing.assert_allclose(p, c.causal_softmax_fwd(s), **tol)
    dp = rng.normal(size=p.shape).astype(dtype)
    np.testing.assert_allclose(py.causal_softmax_bwd(dp, p), c.causal_softmax_bwd(dp, p), **tol)
    u = rng.normal(size=50).astype(dtype)
    np.testing.assert_allclose(py.gelu_fwd(u), c.gelu_fwd(u), **tol)
    np.testing.assert_allclose(py.gelu_bwd(u, u), c.gelu_bwd(u, u), **tol)
    lg = rng.normal(size=(10, 12)).astype(dtype)
    tg = rng.integers(0, 12, size=10)
    w = rng.random(10).astype(dtype)
    for u, v in zip(py.xent_fwd_bwd(lg, tg, w), c.xent_fwd_bwd(lg, tg, w)):
        np.testing.assert_allclose(u, v, **tol)
        assert v.dtype == dtype
    o1, o2 = np.zeros((5, 4), dtype), np.zeros((5, 4), dtype)
    idx = rng.integers(0, 5, size=20)
    src = rng.normal(size=(20, 4)).astype(dtype)
    py.scatter_add_rows(o1, idx, src)
    c.scatter_add_rows(o2, idx, src)
    np.testing.assert_allclose(o1, o2, **tol)
