"""Differentiable operations used by the networks.

Each op has a plain numpy kernel (``*_np``) that the spiking simulator
reuses, and a :class:`Tensor`-level wrapper that records the backward
pass.
"""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ratenorm.errors import DimensionError
from ratenorm.core.tensor import Tensor, as_tensor, make_node


class ZeroVectorWarning(RuntimeWarning):
    """Cosine similarity was requested for an all-zero vector."""


# ---------------------------------------------------------------- affine


def affine_np(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    if W.ndim != 2:
        raise DimensionError(f"weight must be 2-D [out, in], got shape {W.shape}")
    if x.shape[-1] != W.shape[1]:
        raise DimensionError(f"input shape {x.shape} does not match weight shape {W.shape}")
    if b.shape != (W.shape[0],):
        raise DimensionError(f"bias shape {b.shape} does not match weight shape {W.shape}")
    return x @ W.T + b


def affine_forward(W: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """``W x + b`` batched over the leading dimensions of ``x``."""
    W, x, b = as_tensor(W), as_tensor(x), as_tensor(b)
    out = affine_np(W.data, x.data, b.data)

    def backward(g):
        x2 = x.data.reshape(-1, x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        dW = g2.T @ x2 if W.requires_grad else None
        db = g2.sum(axis=0) if b.requires_grad else None
        dx = g @ W.data if x.requires_grad else None
        return dW, dx, db

    return make_node(out, (W, x, b), backward)


# ---------------------------------------------------------------- conv2d


def _conv_out_size(n: int, k: int, stride: int) -> int:
    return (n - k) // stride + 1


def _conv_windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # [B, C, Ho, Wo, kh, kw]
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _check_conv(K: np.ndarray, x: np.ndarray, b: np.ndarray, stride: int) -> None:
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be [batch, channels, H, W], got shape {x.shape}")
    if K.ndim != 4:
        raise DimensionError(f"conv2d kernel must be [out, in, kh, kw], got shape {K.shape}")
    if K.shape[1] != x.shape[1]:
        raise DimensionError(f"kernel shape {K.shape} does not match input channels of {x.shape}")
    if K.shape[2] > x.shape[2] or K.shape[3] > x.shape[3]:
        raise DimensionError(f"kernel shape {K.shape} is larger than input shape {x.shape}")
    if b.shape != (K.shape[0],):
        raise DimensionError(f"bias shape {b.shape} does not match kernel shape {K.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")


def conv2d_np(K: np.ndarray, x: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    _check_conv(K, x, b, stride)
    win = _conv_windows(x, K.shape[2], K.shape[3], stride)
    out = np.tensordot(win, K, axes=([1, 4, 5], [1, 2, 3]))  # [B, Ho, Wo, O]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b[None, :, None, None]


def conv2d_forward(K: Tensor, x: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation of ``x`` with kernel ``K`` plus per-channel bias."""
    K, x, b = as_tensor(K), as_tensor(x), as_tensor(b)
    out = conv2d_np(K.data, x.data, b.data, stride)
    kh, kw = K.shape[2], K.shape[3]

    def backward(g):
        dK = db = dx = None
        if K.requires_grad:
            win = _conv_windows(x.data, kh, kw, stride)
            dK = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if b.requires_grad:
            db = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            ho, wo = g.shape[2], g.shape[3]
            for i in range(kh):
                for j in range(kw):
                    dx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.einsum(
                        "bohw,oc->bchw", g, K.data[:, :, i, j]
                    )
        return dK, dx, db

    return make_node(out, (K, x, b), backward)


# ---------------------------------------------------------------- pooling / reshape


def avgpool2d_np(x: np.ndarray, window: int) -> np.ndarray:
    if x.ndim != 4:
        raise DimensionError(f"avgpool2d input must be [batch, channels, H, W], got shape {x.shape}")
    B, C, H, W = x.shape
    if window < 1 or H % window or W % window:
        raise DimensionError(f"spatial dims of {x.shape} are not divisible by window {window}")
    return x.reshape(B, C, H // window, window, W // window, window).mean(axis=(3, 5))


def avgpool2d(x: Tensor, window: int) -> Tensor:
    x = as_tensor(x)
    out = avgpool2d_np(x.data, window)
    scale = 1.0 / (window * window)

    def backward(g):
        return (np.repeat(np.repeat(g, window, axis=2), window, axis=3) * scale,)

    return make_node(out, (x,), backward)


def flatten_np(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def flatten(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return x.reshape(x.shape[0], -1)


# ---------------------------------------------------------------- pointwise


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def clip_interval(x: Tensor, lo: float, hi: float) -> Tensor:
    """Elementwise clip to ``[lo, hi]``; gradient passes where ``lo <= x <= hi``."""
    if lo > hi:
        raise ValueError(f"clip bounds inverted: lo={lo} > hi={hi}")
    x = as_tensor(x)
    mask = (x.data >= lo) & (x.data <= hi)
    return make_node(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid_np(x.data)
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),))


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


# ---------------------------------------------------------------- losses and similarities


def cross_entropy_loss(logits: Tensor, labels: Sequence[int] | np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over the batch."""
    logits = as_tensor(logits)
    z = logits.data
    if z.ndim != 2:
        raise DimensionError(f"logits must be [batch, classes], got shape {z.shape}")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (z.shape[0],):
        raise DimensionError(f"labels shape {y.shape} does not match logits shape {z.shape}")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise ValueError(f"labels must lie in [0, {z.shape[1]}), got range [{y.min()}, {y.max()}]")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = float(np.mean(lse - shifted[rows, y]))
    n = z.shape[0]

    def backward(g):
        probs = np.exp(shifted - lse[:, None])
        probs[rows, y] -= 1.0
        return (probs * (g / n),)

    return make_node(np.asarray(loss), (logits,), backward)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """``a.b / (|a| |b|)`` over all elements.

    If either argument is all-zero the result is defined as 0 and a
    :class:`ZeroVectorWarning` is issued.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity shapes differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine similarity of an all-zero vector; returning 0", ZeroVectorWarning, stacklevel=2)
        return make_node(np.asarray(0.0), (a, b), lambda g: (np.zeros(a.shape), np.zeros(b.shape)))
    dot = float(np.sum(a.data * b.data))
    cos = dot / (na * nb)

    def backward(g):
        da = g * (b.data / (na * nb) - cos * a.data / (na * na))
        db = g * (a.data / (na * nb) - cos * b.data / (nb * nb))
        return da, db

    return make_node(np.asarray(cos), (a, b), backward)


def omega(r: Tensor) -> Tensor:
    """Rate inference loss ``|r|_1 / |r|_2^2`` over all elements of ``r``."""
    r = as_tensor(r)
    l1 = float(np.abs(r.data).sum())
    l2sq = float(np.square(r.data).sum())
    if l2sq == 0.0:
        raise ValueError("omega is undefined for an all-zero rate vector")

    def backward(g):
        return (g * (np.sign(r.data) * l2sq - 2.0 * r.data * l1) / (l2sq * l2sq),)

    return make_node(np.asarray(l1 / l2sq), (r,), backward)


def stack_mean(values: Sequence[Tensor]) -> Tensor:
    """Mean of scalar tensors."""
    if not values:
        raise ValueError("mean of an empty sequence")
    total = values[0]
    for v in values[1:]:
        total = total + v
    return total / float(len(values))
