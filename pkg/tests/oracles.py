"""Slow, obviously-correct reference implementations used by the tests."""

import numpy as np


def naive_affine(W, x, b):
    out = np.zeros((x.shape[0], W.shape[0]))
    for n in range(x.shape[0]):
        for i in range(W.shape[0]):
            s = b[i]
            for j in range(W.shape[1]):
                s += W[i, j] * x[n, j]
            out[n, i] = s
    return out


def naive_conv2d(K, x, b, stride=1):
    n, c, h, w = x.shape
    o, _, kh, kw = K.shape
    oh, ow = (h - kh) // stride + 1, (w - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for s in range(n):
        for f in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = b[f]
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += K[f, ch, u, v] * x[s, ch, i * stride + u, j * stride + v]
                    out[s, f, i, j] = acc
    return out


def central_difference(f, x, eps=1e-6):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        up = f(x)
        x[i] = old - eps
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def logsumexp_ce(z, y):
    total = 0.0
    for row, label in zip(z, y):
        m = max(row)
        lse = m + np.log(sum(np.exp(v - m) for v in row))
        total += lse - row[label]
    return total / len(y)
