# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same signatures and semantics as ``_fallback``.

wraparound is off module-wide: never index with negative numbers here.
"""

import numpy as np
cimport cython
from libc.math cimport exp, log, sqrt, tanh

ctypedef fused real:
    float
    double

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def layer_norm_fwd(x, gamma, beta, double eps):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(x.shape[0], dtype=x.dtype)
    _ln_fwd(x, gamma, beta, eps, y, xhat, rstd)
    return y, xhat, rstd


cdef inline void _ln_row(real* x, real* g, real* b, double eps, real* y, real* xh, real* rs, Py_ssize_t h) noexcept nogil:
    cdef double mu = 0.0, var = 0.0, d, r
    cdef Py_ssize_t j
    for j in range(h):
        mu += x[j]
    mu /= h
    for j in range(h):
        d = x[j] - mu
        var += d * d
    var /= h
    r = 1.0 / sqrt(var + eps)
    rs[0] = <real>r
    for j in range(h):
        d = (x[j] - mu) * r
        xh[j] = <real>d
        y[j] = <real>(d * g[j] + b[j])


def _ln_fwd(real[:, ::1] x, real[::1] g, real[::1] b, double eps,
            real[:, ::1] y, real[:, ::1] xh, real[::1] rs):
    cdef Py_ssize_t i, n = x.shape[0], h = x.shape[1]
    with nogil:
        for i in range(n):
            _ln_row(&x[i, 0], &g[0], &b[0], eps, &y[i, 0], &xh[i, 0], &rs[i], h)


def layer_norm_bwd(dy, xhat, rstd, gamma):
    dy = np.ascontiguousarray(dy)
    dx = np.empty_like(dy)
    dgamma = np.zeros(dy.shape[1], dtype=np.float64)
    dbeta = np.zeros(dy.shape[1], dtype=np.float64)
    _ln_bwd(dy, xhat, rstd, gamma, dx, dgamma, dbeta)
    return dx, dgamma.astype(dy.dtype), dbeta.astype(dy.dtype)


def _ln_bwd(real[:, ::1] dy, real[:, ::1] xh, real[::1] rs, real[::1] g,
            real[:, ::1] dx, double[::1] dg, double[::1] db):
    cdef Py_ssize_t i, j, n = dy.shape[0], h = dy.shape[1]
    cdef double s1, s2, gj
    with nogil:
        for i in range(n):
            s1 = 0.0
            s2 = 0.0
            for j in range(h):
                gj = dy[i, j] * g[j]
                s1 += gj
                s2 += gj * xh[i, j]
                dg[j] += dy[i, j] * xh[i, j]
                db[j] += dy[i, j]
            s1 /= h
            s2 /= h
            for j in range(h):
                dx[i, j] = <real>((dy[i, j] * g[j] - s1 - xh[i, j] * s2) * rs[i])


def causal_softmax_fwd(scores):
    shape = scores.shape
    t = shape[len(shape) - 1]
    s = np.ascontiguousarray(scores).reshape(-1, t, t)
    p = np.zeros_like(s)
    _csm_fwd(s, p)
    return p.reshape(shape)


def _csm_fwd(real[:, :, ::1] s, real[:, :, ::1] p):
    cdef Py_ssize_t m, i, j, nm = s.shape[0], t = s.shape[1]
    cdef double mx, z, e
    with nogil:
        for m in range(nm):
            for i in range(t):
                mx = s[m, i, 0]
                for j in range(1, i + 1):
                    if s[m, i, j] > mx:
                        mx = s[m, i, j]
                z = 0.0
                for j in range(i + 1):
                    e = exp(s[m, i, j] - mx)
                    p[m, i, j] = <real>e
                    z += e
                z = 1.0 / z
                for j in range(i + 1):
                    p[m, i, j] = <real>(p[m, i, j] * z)


def causal_softmax_bwd(dprobs, probs):
    shape = probs.shape
    t = shape[len(shape) - 1]
    dp = np.ascontiguousarray(dprobs).reshape(-1, t, t)
    p = np.ascontiguousarray(probs).reshape(-1, t, t)
    ds = np.zeros_like(p)
    _csm_bwd(dp, p, ds)
    return ds.reshape(shape)


def _csm_bwd(real[:, :, ::1] dp, real[:, :, ::1] p, real[:, :, ::1] ds):
    cdef Py_ssize_t m, i, j, nm = p.shape[0], t = p.shape[1]
    cdef double acc
    with nogil:
        for m in range(nm):
            for i in range(t):
                acc = 0.0
                for j in range(i + 1):
                    acc += dp[m, i, j] * p[m, i, j]
                for j in range(i + 1):
                    ds[m, i, j] = <real>(p[m, i, j] * (dp[m, i, j] - acc))


def gelu_fwd(u):
    flat = np.ascontiguousarray(u).reshape(-1)
    out = np.empty_like(flat)
    _gelu_fwd(flat, out)
    return out.reshape(u.shape)


def _gelu_fwd(real[::1] u, real[::1] out):
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double x
    with nogil:
        for i in range(n):
            x = u[i]
            out[i] = <real>(0.5 * x * (1.0 + tanh(GELU_C * (x + GELU_A * x * x * x))))


def gelu_bwd(dg, u):
    flat = np.ascontiguousarray(u).reshape(-1)
    dflat = np.ascontiguousarray(dg).reshape(-1)
    out = np.empty_like(flat)
    _gelu_bwd(dflat, flat, out)
    return out.reshape(u.shape)


def _gelu_bwd(real[::1] dg, real[::1] u, real[::1] out):
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double x, t
    with nogil:
        for i in range(n):
            x = u[i]
            t = tanh(GELU_C * (x + GELU_A * x * x * x))
            out[i] = <real>(dg[i] * (0.5 * (1.0 + t)
                            + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)))


def xent_fwd_bwd(logits, targets, weights):
    logits = np.ascontiguousarray(logits)
    tg = np.ascontiguousarray(targets, dtype=np.int64)
    w = np.ascontiguousarray(weights, dtype=logits.dtype)
    nll = np.empty(logits.shape[0], dtype=logits.dtype)
    grad = np.empty_like(logits)
    _xent(logits, tg, w, nll, grad)
    return nll, grad


def _xent(real[:, ::1] lg, long long[::1] tg, real[::1] w, real[::1] nll, real[:, ::1] grad):
    cdef Py_ssize_t i, j, n = lg.shape[0], v = lg.shape[1]
    cdef double mx, z, e, inv
    with nogil:
        for i in range(n):
            mx = lg[i, 0]
            for j in range(1, v):
                if lg[i, j] > mx:
                    mx = lg[i, j]
            z = 0.0
            for j in range(v):
                e = exp(lg[i, j] - mx)
                grad[i, j] = <real>e
                z += e
            nll[i] = <real>(log(z) + mx - lg[i, tg[i]])
            inv = w[i] / z
            for j in range(v):
                grad[i, j] = <real>(grad[i, j] * inv)
            grad[i, tg[i]] = <real>(grad[i, tg[i]] - w[i])


def scatter_add_rows(out, index, src):
    idx = np.ascontiguousarray(index, dtype=np.int64).reshape(-1)
    s = np.ascontiguousarray(src).reshape(idx.shape[0], -1)
    _scatter(out, idx, s)


def _scatter(real[:, ::1] out, long long[::1] idx, real[:, ::1] src):
    cdef Py_ssize_t i, j, n = idx.shape[0], h = src.shape[1]
    cdef long long r
    with nogil:
        for i in range(n):
            r = idx[i]
            for j in range(h):
                out[r, j] += src[i, j]


def edit_distance(str a, str b):
    if len(a) < len(b):
        a, b = b, a
    cdef Py_ssize_t i, j, la = len(a), lb = len(b)
    cdef Py_ssize_t[::1] prev = np.arange(lb + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] cur = np.empty(lb + 1, dtype=np.intp)
    cdef Py_ssize_t best, cost
    for i in range(1, la + 1):
        cur[0] = i
        ca = a[i - 1]
        for j in range(1, lb + 1):
            cost = 0 if ca == b[j - 1] else 1
            best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            if prev[j - 1] + cost < best:
                best = prev[j - 1] + cost
            cur[j] = best
        prev, cur = cur, prev
    return prev[lb]
