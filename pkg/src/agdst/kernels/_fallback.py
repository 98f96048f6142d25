"""Pure numpy implementations of the hot kernels (reference and fallback)."""

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def layer_norm_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layer_norm_bwd(dy, xhat, rstd, gamma):
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    g = dy * gamma
    dx = g - g.mean(axis=-1, keepdims=True) - xhat * np.mean(g * xhat, axis=-1, keepdims=True)
    dx *= rstd[:, None]
    return dx, dgamma, dbeta


def causal_softmax_fwd(scores):
    t = scores.shape[-1]
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    s = np.where(mask, -np.inf, scores)
    s = s - s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    return p.astype(scores.dtype, copy=False)


def causal_softmax_bwd(dprobs, probs):
    return probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))


def gelu_fwd(u):
    t = np.tanh(_GELU_C * (u + _GELU_A * u ** 3))
    return (0.5 * u * (1.0 + t)).astype(u.dtype, copy=False)


def gelu_bwd(dg, u):
    t = np.tanh(_GELU_C * (u + _GELU_A * u ** 3))
    d = 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * u * u)
    return (dg * d).astype(u.dtype, copy=False)


def xent_fwd_bwd(logits, targets, weights):
    """Row-wise NLL of ``targets`` and the gradient of ``sum(weights * nll)``."""
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=-1, keepdims=True)
    rows = np.arange(logits.shape[0])
    nll = (np.log(z[:, 0]) + m[:, 0] - logits[rows, targets]).astype(logits.dtype, copy=False)
    grad = e / z
    grad[rows, targets] -= 1.0
    grad *= weights[:, None]
    return nll, grad.astype(logits.dtype, copy=False)


def scatter_add_rows(out, index, src):
    np.add.at(out, index, src)


def edit_distance(a, b):
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]
