"""Gradient-oracle checks for every differentiable head and loss.

Each check wires a head to its training loss on fixed random inputs and
compares the accumulated analytic gradients against central finite
differences.  Used by the `gradcheck` CLI subcommand and the acceptance
suite.
"""

from __future__ import annotations

import numpy as np

from .neural import ParamBlock, RpnHead, RprHead, SecondStageHead, TinyBackbone, grad_check
from .neural.gradcheck import GradCheckReport
from .neural.layers import logistic, logistic_grad, softmax
from .neural.losses import (
    LossBatch,
    distance_loss_grads,
    multitask_loss_grads,
    smooth_l1,
    smooth_l1_grad,
)

TOLERANCE = 1e-4
STEP = 1e-5


def check_rpr_head(seed: int) -> GradCheckReport:
    """RPR head + two-way log loss + corner-offset smooth L1."""
    rng = np.random.default_rng(seed)
    head = RprHead(channels=4, pool=3, hidden=8)
    params = ParamBlock()
    head.init_params(params, rng)
    pooled = rng.normal(0.0, 1.0, size=(4, 3, 3, 4))
    p_star = np.array([1.0, 1.0, 0.0, 0.0])
    t_star = rng.normal(0.0, 0.4, size=(2, 4))

    def loss_fn(p: ParamBlock) -> float:
        objectness, offsets, logits, cache = head.forward(pooled, p)
        batch = LossBatch(p=objectness, p_star=p_star, t=offsets[:2], t_star=t_star, n_cls=4, n_reg=2)
        loss, dp, dt = multitask_loss_grads(batch)
        dlogits = dp * logistic_grad(logits)
        doffsets = np.zeros_like(offsets)
        doffsets[:2] = dt
        head.backward(dlogits, doffsets, cache, p)
        return loss

    return grad_check(loss_fn, params, step=STEP, tolerance=TOLERANCE, rng=np.random.default_rng(seed))


def check_rpn_head(seed: int) -> GradCheckReport:
    """RPN heads (objectness, box, distance) with their joint loss."""
    rng = np.random.default_rng(seed)
    k = 3
    head = RpnHead(cin=4, mid=4, k=k)
    params = ParamBlock()
    head.init_params(params, rng)
    fm = rng.normal(0.0, 1.0, size=(4, 5, 4))
    n_anchors = 4 * 5 * k
    pos = [0, 7, 19]
    neg = [3, 11, 25, 40]
    chosen = pos + neg
    p_star = np.array([1.0] * len(pos) + [0.0] * len(neg))
    t_star = rng.normal(0.0, 0.4, size=(len(pos), 4))
    d_star = np.ones(n_anchors)
    d_star[pos] = rng.uniform(5.0, 30.0, size=len(pos))
    mask = np.zeros(n_anchors, dtype=bool)
    mask[pos] = True

    def loss_fn(p: ParamBlock) -> float:
        out = head.forward(fm, p)
        obj_logits = out.obj_logits.reshape(-1, 2)
        box = out.box_deltas.reshape(-1, 4)
        dist = out.distance_raw.reshape(-1)
        batch = LossBatch(
            p=out.objectness.reshape(-1)[chosen], p_star=p_star,
            t=box[pos], t_star=t_star, n_cls=len(chosen), n_reg=len(pos),
        )
        loss, dp, dt = multitask_loss_grads(batch)
        probs = softmax(obj_logits[chosen], axis=-1)
        dpair = np.zeros_like(probs)
        dpair[:, 1] = dp
        dot = (dpair * probs).sum(axis=1, keepdims=True)
        dobj = np.zeros_like(obj_logits)
        dobj[chosen] = probs * (dpair - dot)
        dbox = np.zeros_like(box)
        dbox[pos] = dt
        dist_l, ddist = distance_loss_grads(dist, d_star, mask)
        loss += dist_l
        head.backward(
            dobj.reshape(4, 5, k, 2), dbox.reshape(4, 5, k, 4), ddist.reshape(4, 5, k),
            out.cache, p,
        )
        return loss

    return grad_check(loss_fn, params, step=STEP, tolerance=TOLERANCE, rng=np.random.default_rng(seed))


def check_second_stage_head(seed: int) -> GradCheckReport:
    """Second-stage softmax classification + per-class box regression."""
    rng = np.random.default_rng(seed)
    head = SecondStageHead(num_classes=3, channels=4, pool=3, hidden=8)
    params = ParamBlock()
    head.init_params(params, rng)
    pooled = rng.normal(0.0, 1.0, size=(5, 3, 3, 4))
    labels = np.array([1, 3, 0, 2, 0])
    fg = [0, 1, 3]
    targets = rng.normal(0.0, 0.4, size=(len(fg), 4))

    def loss_fn(p: ParamBlock) -> float:
        probs, deltas, logits, cache = head.forward(pooled, p)
        n = len(labels)
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), labels] = 1.0
        loss = float(-np.log(np.clip(probs[np.arange(n), labels], 1e-12, None)).sum()) / n
        dlogits = (probs - onehot) / n
        ddeltas = np.zeros_like(deltas)
        for row, i in enumerate(fg):
            diff = deltas[i, labels[i]] - targets[row]
            loss += float(smooth_l1(diff).sum()) / len(fg)
            ddeltas[i, labels[i]] = smooth_l1_grad(diff) / len(fg)
        head.backward(dlogits, ddeltas, cache, p)
        return loss

    return grad_check(loss_fn, params, step=STEP, tolerance=TOLERANCE, rng=np.random.default_rng(seed))


def check_backbone(seed: int) -> GradCheckReport:
    """Backbone convolutions against a fixed linear readout loss."""
    rng = np.random.default_rng(seed)
    bb = TinyBackbone()
    params = ParamBlock()
    bb.init_params(params, rng)
    image = rng.uniform(0.0, 1.0, size=(16, 16, 3))
    readout = rng.normal(0.0, 1.0, size=(2, 2, 16))

    def loss_fn(p: ParamBlock) -> float:
        fm, cache = bb.forward(image, p)
        bb.backward(readout, cache, p)
        return float((fm.data * readout).sum())

    return grad_check(loss_fn, params, step=STEP, tolerance=TOLERANCE, rng=np.random.default_rng(seed))


ALL_CHECKS = [
    ("rpr_head", check_rpr_head),
    ("rpn_head", check_rpn_head),
    ("second_stage_head", check_second_stage_head),
    ("backbone", check_backbone),
]


def run_all(seeds=(0, 1, 2, 3, 4)):
    """Run every check at every seed; yields (name, seed, report)."""
    results = []
    for name, fn in ALL_CHECKS:
        for seed in seeds:
            results.append((name, seed, fn(seed)))
    return results
