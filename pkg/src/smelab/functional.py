"""Neural-network operations composed from the primitives in :mod:`autodiff`.

Composition keeps every operation closed under differentiation: convolution is
a gather followed by a matmul, pooling is a reshape followed by a reduction or
a gather, so no hand-written second-order rules are needed.
"""
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, constant

__all__ = [
    "linear", "conv2d", "mean_pool2d", "max_pool2d", "flatten", "log_softmax",
    "nll_loss", "cross_entropy",
]


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` of shape (out, in)."""
    out = ad.matmul(x, ad.transpose(weight))
    if bias is not None:
        out = out + bias
    return out


def flatten(x):
    return ad.reshape(x, (x.shape[0], -1))


@lru_cache(maxsize=64)
def _im2col_index(channels, height, width, kernel):
    out_h, out_w = height - kernel + 1, width - kernel + 1
    c, ki, kj = np.meshgrid(np.arange(channels), np.arange(kernel), np.arange(kernel),
                            indexing="ij")
    c, ki, kj = c.reshape(-1), ki.reshape(-1), kj.reshape(-1)
    oi, oj = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    oi, oj = oi.reshape(-1, 1), oj.reshape(-1, 1)
    # (out_h * out_w, channels * kernel * kernel) gather pattern
    rows = oi + ki[None, :]
    cols = oj + kj[None, :]
    chans = np.broadcast_to(c[None, :], rows.shape)
    return chans, rows, cols


def _pad2d(x, padding):
    if padding == 0:
        return x
    n, c, h, w = x.shape
    idx = (slice(None), slice(None), slice(padding, padding + h), slice(padding, padding + w))
    return ad.scatter(x, (n, c, h + 2 * padding, w + 2 * padding), idx)


def conv2d(x, weight, bias=None, padding=0):
    """Stride-1 2D cross-correlation.

    ``x`` is (N, C, H, W), ``weight`` is (O, C, k, k) and ``bias`` is (O,).
    """
    x, weight = constant(x), constant(weight)
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != x.shape[1] \
            or weight.shape[2] != weight.shape[3]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    n = x.shape[0]
    out_ch, in_ch, k, _ = weight.shape
    xp = _pad2d(x, padding)
    h, w = xp.shape[2], xp.shape[3]
    if h < k or w < k:
        raise ShapeError("conv2d", x.shape, weight.shape)
    out_h, out_w = h - k + 1, w - k + 1
    chans, rows, cols = _im2col_index(in_ch, h, w, k)
    patches = ad.getitem(xp, (slice(None), chans, rows, cols))   # (N, HW, CKK)
    patches = ad.reshape(patches, (n * out_h * out_w, in_ch * k * k))
    out = ad.matmul(patches, ad.transpose(ad.reshape(weight, (out_ch, in_ch * k * k))))
    if bias is not None:
        out = out + bias
    out = ad.reshape(out, (n, out_h, out_w, out_ch))
    return ad.transpose(out, (0, 3, 1, 2))


def _pool_blocks(x, size):
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError("pool2d", x.shape, (size, size))
    blocks = ad.reshape(x, (n, c, h // size, size, w // size, size))
    blocks = ad.transpose(blocks, (0, 1, 2, 4, 3, 5))
    return ad.reshape(blocks, (n, c, h // size, w // size, size * size))


def mean_pool2d(x, size=2):
    return ad.mean(_pool_blocks(constant(x), size), axis=4)


def max_pool2d(x, size=2):
    blocks = _pool_blocks(constant(x), size)
    arg = np.argmax(blocks.value, axis=4)
    n, c, h, w = arg.shape
    grid = np.meshgrid(np.arange(n), np.arange(c), np.arange(h), np.arange(w), indexing="ij")
    return ad.getitem(blocks, tuple(grid) + (arg,))


def log_softmax(z):
    """Row-wise log-softmax of a (N, C) logit matrix."""
    z = constant(z)
    shift = np.max(z.value, axis=1, keepdims=True)
    s = z - shift
    return s - ad.log(ad.sum(ad.exp(s), axis=1, keepdims=True))


def nll_loss(logp, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``logp``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logp.ndim != 2 or labels.shape != (logp.shape[0],):
        raise ShapeError("nll_loss", logp.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= logp.shape[1]):
        raise ValueError(f"labels must lie in [0, {logp.shape[1]})")
    picked = ad.getitem(logp, (np.arange(labels.size), labels))
    return ad.neg(ad.mean(picked))


def cross_entropy(logits, labels):
    return nll_loss(log_softmax(logits), labels)


