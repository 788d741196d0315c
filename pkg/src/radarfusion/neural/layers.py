"""Forward/backward primitives over float64 numpy arrays.

Every forward returns (output, cache); the matching backward consumes
the upstream gradient and the cache.  Layouts are channel-last: images
and feature maps are (H, W, C).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Box2D
from ..kernels import roi_pool_max

LEAKY_SLOPE = 0.1
LOGISTIC_CLAMP = 30.0


@dataclass(frozen=True)
class FeatureMap:
    """H x W x C feature grid tied to image pixels by a stride."""

    data: np.ndarray
    stride: int

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("feature map data must be H x W x C")
        if self.stride <= 0:
            raise ValueError("stride must be positive")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature map contains non-finite values")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    cin = xp.shape[2]
    cols = np.empty((ho, wo, kh, kw, cin), dtype=np.float64)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, ki, kj, :] = xp[ki : ki + ho * stride : stride, kj : kj + wo * stride : stride, :]
    return cols


def conv2d_forward(x, w, b, stride=1, pad=1):
    """x: (H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,)."""
    kh, kw, cin, cout = w.shape
    h, wid = x.shape[:2]
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wid + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    y = cols.reshape(ho * wo, -1) @ w.reshape(-1, cout) + b
    cache = (cols, x.shape, w, stride, pad)
    return y.reshape(ho, wo, cout), cache


def conv2d_backward(dy, cache):
    cols, x_shape, w, stride, pad = cache
    kh, kw, cin, cout = w.shape
    ho, wo = dy.shape[:2]
    dyf = dy.reshape(ho * wo, cout)
    dw = (cols.reshape(ho * wo, -1).T @ dyf).reshape(w.shape)
    db = dyf.sum(axis=0)
    dcols = (dyf @ w.reshape(-1, cout).T).reshape(ho, wo, kh, kw, cin)
    h, wid = x_shape[:2]
    dxp = np.zeros((h + 2 * pad, wid + 2 * pad, cin), dtype=np.float64)
    for ki in range(kh):
        for kj in range(kw):
            dxp[ki : ki + ho * stride : stride, kj : kj + wo * stride : stride, :] += dcols[:, :, ki, kj, :]
    dx = dxp[pad : pad + h, pad : pad + wid, :] if pad else dxp
    return dx, dw, db


def fc_forward(x, w, b):
    """x: (..., Din); w: (Din, Dout)."""
    y = x @ w + b
    return y, (x, w)


def fc_backward(dy, cache):
    x, w = cache
    dx = dy @ w.T
    flat_x = x.reshape(-1, w.shape[0])
    flat_dy = dy.reshape(-1, w.shape[1])
    dw = flat_x.T @ flat_dy
    db = flat_dy.sum(axis=0)
    return dx, dw, db


def leaky_relu_forward(x, slope=LEAKY_SLOPE):
    mask = x >= 0
    return np.where(mask, x, slope * x), (mask, slope)


def leaky_relu_backward(dy, cache):
    mask, slope = cache
    return np.where(mask, dy, slope * dy)


def logistic(x):
    """Numerically clamped sigmoid."""
    z = np.clip(x, -LOGISTIC_CLAMP, LOGISTIC_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def logistic_grad(x):
    s = logistic(x)
    inside = np.abs(x) < LOGISTIC_CLAMP
    return np.where(inside, s * (1.0 - s), 0.0)


def softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def roi_pool(fm: FeatureMap, box: Box2D, out_size: tuple[int, int]):
    """Max-pool the feature cells under a pixel-space box into a fixed grid.

    Returns (pooled (Ph, Pw, C), cache).  The box must intersect the
    feature map extent.
    """
    ph, pw = out_size
    h, w = fm.data.shape[:2]
    x1 = box.x1 / fm.stride
    y1 = box.y1 / fm.stride
    x2 = box.x2 / fm.stride
    y2 = box.y2 / fm.stride
    if x2 <= 0 or y2 <= 0 or x1 >= w or y1 >= h:
        raise ValueError("box lies fully outside the feature map")
    pooled, argmax = roi_pool_max(fm.data, x1, y1, x2, y2, ph, pw)
    return pooled, (argmax, fm.data.shape)


def roi_pool_backward(dpooled, cache):
    """Scatter pooled gradients back to the feature map via argmax routing."""
    argmax, fm_shape = cache
    h, w, c = fm_shape
    dfm = np.zeros(fm_shape, dtype=np.float64)
    flat = argmax.reshape(-1, c)
    dflat = dpooled.reshape(-1, c)
    for k in range(c):
        valid = flat[:, k] >= 0
        np.add.at(dfm.reshape(-1, c)[:, k], flat[valid, k], dflat[valid, k])
    return dfm
