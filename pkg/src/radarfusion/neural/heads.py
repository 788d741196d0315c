"""Detection heads: radar proposal refinement, image RPN, second stage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    conv2d_backward,
    conv2d_forward,
    fc_backward,
    fc_forward,
    leaky_relu_backward,
    leaky_relu_forward,
    logistic,
    softmax,
)
from .params import ParamBlock

DEFAULT_POOL = 7

# RPN 2D anchor defaults: 3 scales x 3 ratios = k = 9.
DEFAULT_SCALES = (16.0, 32.0, 64.0)
DEFAULT_RATIOS = (0.5, 1.0, 2.0)


def make_anchor_grid(h: int, w: int, stride: int, scales=DEFAULT_SCALES, ratios=DEFAULT_RATIOS) -> np.ndarray:
    """Per-cell 2D anchors, shape (H, W, k, 4) in x1,y1,x2,y2 pixels.

    Anchors are centered on feature cells; they may extend past the
    image borders.
    """
    k = len(scales) * len(ratios)
    shapes = np.empty((k, 2))
    idx = 0
    for scale in scales:
        for ratio in ratios:
            # ratio = height / width at constant area scale^2
            shapes[idx] = (scale / np.sqrt(ratio), scale * np.sqrt(ratio))
            idx += 1
    cy = (np.arange(h) + 0.5) * stride
    cx = (np.arange(w) + 0.5) * stride
    grid = np.empty((h, w, k, 4))
    grid[..., 0] = cx[None, :, None] - shapes[None, None, :, 0] / 2.0
    grid[..., 1] = cy[:, None, None] - shapes[None, None, :, 1] / 2.0
    grid[..., 2] = cx[None, :, None] + shapes[None, None, :, 0] / 2.0
    grid[..., 3] = cy[:, None, None] + shapes[None, None, :, 1] / 2.0
    return grid


class RprHead:
    """Objectness + corner-offset regression over pooled radar-proposal features."""

    def __init__(self, channels=16, pool=DEFAULT_POOL, hidden=64):
        self.in_dim = pool * pool * channels
        self.hidden = hidden

    def init_params(self, params: ParamBlock, rng: np.random.Generator) -> None:
        params.add("rpr.fc1.w", rng.normal(0.0, np.sqrt(2.0 / self.in_dim), size=(self.in_dim, self.hidden)))
        params.add("rpr.fc1.b", np.zeros(self.hidden))
        params.add("rpr.obj.w", rng.normal(0.0, 0.01, size=(self.hidden, 1)))
        params.add("rpr.obj.b", np.zeros(1))
        params.add("rpr.reg.w", rng.normal(0.0, 0.01, size=(self.hidden, 4)))
        params.add("rpr.reg.b", np.zeros(4))

    def forward(self, pooled: np.ndarray, params: ParamBlock):
        """pooled: (P, Ph, Pw, C).  Returns (objectness (P,), offsets (P, 4), logits, cache)."""
        flat = pooled.reshape(pooled.shape[0], -1)
        h1, c1 = fc_forward(flat, params.value("rpr.fc1.w"), params.value("rpr.fc1.b"))
        a1, ca = leaky_relu_forward(h1)
        obj_logits, co = fc_forward(a1, params.value("rpr.obj.w"), params.value("rpr.obj.b"))
        offsets, cr = fc_forward(a1, params.value("rpr.reg.w"), params.value("rpr.reg.b"))
        objectness = logistic(obj_logits[:, 0])
        cache = (c1, ca, co, cr, pooled.shape)
        return objectness, offsets, obj_logits[:, 0], cache

    def backward(self, dobj_logits, doffsets, cache, params: ParamBlock):
        c1, ca, co, cr, pooled_shape = cache
        da1_o, dw, db = fc_backward(dobj_logits[:, None], co)
        params.accumulate("rpr.obj.w", dw)
        params.accumulate("rpr.obj.b", db)
        da1_r, dw, db = fc_backward(doffsets, cr)
        params.accumulate("rpr.reg.w", dw)
        params.accumulate("rpr.reg.b", db)
        dh1 = leaky_relu_backward(da1_o + da1_r, ca)
        dflat, dw, db = fc_backward(dh1, c1)
        params.accumulate("rpr.fc1.w", dw)
        params.accumulate("rpr.fc1.b", db)
        return dflat.reshape(pooled_shape)


@dataclass
class RpnOutput:
    obj_logits: np.ndarray  # (H, W, k, 2)
    objectness: np.ndarray  # (H, W, k) foreground probability
    box_deltas: np.ndarray  # (H, W, k, 4)
    distance_raw: np.ndarray  # (H, W, k)
    cache: tuple


class RpnHead:
    """Shared 3x3 conv feeding 1x1 objectness / box / distance heads."""

    def __init__(self, cin=16, mid=16, k=9):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.cin = cin
        self.mid = mid
        self.k = k

    def init_params(self, params: ParamBlock, rng: np.random.Generator) -> None:
        fan = 3 * 3 * self.cin
        params.add("rpn.conv.w", rng.normal(0.0, np.sqrt(2.0 / fan), size=(3, 3, self.cin, self.mid)))
        params.add("rpn.conv.b", np.zeros(self.mid))
        for name, cout in (("obj", 2 * self.k), ("box", 4 * self.k), ("dist", self.k)):
            params.add(f"rpn.{name}.w", rng.normal(0.0, 0.01, size=(1, 1, self.mid, cout)))
            params.add(f"rpn.{name}.b", np.zeros(cout))

    def forward(self, fm_data: np.ndarray, params: ParamBlock) -> RpnOutput:
        h, w = fm_data.shape[:2]
        mid, c_conv = conv2d_forward(fm_data, params.value("rpn.conv.w"), params.value("rpn.conv.b"), stride=1, pad=1)
        act, c_act = leaky_relu_forward(mid)
        obj, c_obj = conv2d_forward(act, params.value("rpn.obj.w"), params.value("rpn.obj.b"), stride=1, pad=0)
        box, c_box = conv2d_forward(act, params.value("rpn.box.w"), params.value("rpn.box.b"), stride=1, pad=0)
        dist, c_dist = conv2d_forward(act, params.value("rpn.dist.w"), params.value("rpn.dist.b"), stride=1, pad=0)
        obj_logits = obj.reshape(h, w, self.k, 2)
        objectness = softmax(obj_logits, axis=-1)[..., 1]
        return RpnOutput(
            obj_logits=obj_logits,
            objectness=objectness,
            box_deltas=box.reshape(h, w, self.k, 4),
            distance_raw=dist,
            cache=(c_conv, c_act, c_obj, c_box, c_dist),
        )

    def backward(self, dobj_logits, dbox, ddist, cache, params: ParamBlock):
        c_conv, c_act, c_obj, c_box, c_dist = cache
        h, w = ddist.shape[:2]
        dact = np.zeros((h, w, self.mid))
        for name, dy, c in (
            ("obj", dobj_logits.reshape(h, w, 2 * self.k), c_obj),
            ("box", dbox.reshape(h, w, 4 * self.k), c_box),
            ("dist", ddist, c_dist),
        ):
            da, dw, db = conv2d_backward(dy, c)
            params.accumulate(f"rpn.{name}.w", dw)
            params.accumulate(f"rpn.{name}.b", db)
            dact += da
        dmid = leaky_relu_backward(dact, c_act)
        dfm, dw, db = conv2d_backward(dmid, c_conv)
        params.accumulate("rpn.conv.w", dw)
        params.accumulate("rpn.conv.b", db)
        return dfm


class SecondStageHead:
    """RoI features -> class softmax (with background) + per-class box deltas."""

    def __init__(self, num_classes=6, channels=16, pool=DEFAULT_POOL, hidden=128):
        self.num_classes = num_classes
        self.in_dim = pool * pool * channels
        self.hidden = hidden

    def init_params(self, params: ParamBlock, rng: np.random.Generator) -> None:
        n_out = self.num_classes + 1
        params.add("rcnn.fc1.w", rng.normal(0.0, np.sqrt(2.0 / self.in_dim), size=(self.in_dim, self.hidden)))
        params.add("rcnn.fc1.b", np.zeros(self.hidden))
        params.add("rcnn.cls.w", rng.normal(0.0, 0.01, size=(self.hidden, n_out)))
        params.add("rcnn.cls.b", np.zeros(n_out))
        params.add("rcnn.box.w", rng.normal(0.0, 0.01, size=(self.hidden, 4 * n_out)))
        params.add("rcnn.box.b", np.zeros(4 * n_out))

    def forward(self, pooled: np.ndarray, params: ParamBlock):
        """pooled: (P, Ph, Pw, C) -> (class probs (P, n+1), deltas (P, n+1, 4), logits, cache)."""
        n_props = pooled.shape[0]
        flat = pooled.reshape(n_props, -1)
        h1, c1 = fc_forward(flat, params.value("rcnn.fc1.w"), params.value("rcnn.fc1.b"))
        a1, ca = leaky_relu_forward(h1)
        cls_logits, cc = fc_forward(a1, params.value("rcnn.cls.w"), params.value("rcnn.cls.b"))
        box, cb = fc_forward(a1, params.value("rcnn.box.w"), params.value("rcnn.box.b"))
        probs = softmax(cls_logits, axis=-1)
        cache = (c1, ca, cc, cb, pooled.shape)
        return probs, box.reshape(n_props, self.num_classes + 1, 4), cls_logits, cache

    def backward(self, dcls_logits, dbox, cache, params: ParamBlock):
        c1, ca, cc, cb, pooled_shape = cache
        da1_c, dw, db = fc_backward(dcls_logits, cc)
        params.accumulate("rcnn.cls.w", dw)
        params.accumulate("rcnn.cls.b", db)
        da1_b, dw, db = fc_backward(dbox.reshape(pooled_shape[0], -1), cb)
        params.accumulate("rcnn.box.w", dw)
        params.accumulate("rcnn.box.b", db)
        dh1 = leaky_relu_backward(da1_c + da1_b, ca)
        dflat, dw, db = fc_backward(dh1, c1)
        params.accumulate("rcnn.fc1.w", dw)
        params.accumulate("rcnn.fc1.b", db)
        return dflat.reshape(pooled_shape)
