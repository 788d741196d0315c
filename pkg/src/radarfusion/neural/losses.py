"""Losses and the distance output transform.

The distance transform maps an unbounded regression output d_hat to a
positive range via d = 1/logistic(d_hat) - 1; its exact inverse is
encode_distance(d) = -ln(d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import logistic

PROB_FLOOR = 1e-12


def decode_distance(d_hat: float) -> float:
    """Meters from a raw regression output; strictly decreasing in d_hat."""
    return float(1.0 / logistic(np.float64(d_hat)) - 1.0)


def encode_distance(d: float) -> float:
    """Raw regression target for a distance in meters (inverse of decode)."""
    if d <= 0:
        raise ValueError("distance must be positive")
    return float(-np.log(d))


def smooth_l1(x):
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside."""
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def smooth_l1_grad(x):
    return np.where(np.abs(x) < 1.0, x, np.sign(x))


def cross_entropy(p, label: int) -> float:
    """-ln p[label] for a valid probability distribution p."""
    p = np.asarray(p, dtype=np.float64)
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise ValueError("p is not a probability distribution")
    return float(-np.log(max(float(p[label]), PROB_FLOOR)))


@dataclass(frozen=True)
class LossBatch:
    """Inputs to the two-term proposal loss.

    p: predicted foreground probabilities per anchor, shape (N,).
    p_star: 0/1 ground-truth labels, shape (N,).
    t / t_star: predicted and target 4-vectors for the positive anchors
    only, in the order the positives appear in p_star.
    """

    p: np.ndarray
    p_star: np.ndarray
    t: np.ndarray
    t_star: np.ndarray
    n_cls: float
    n_reg: float
    lam: float = 1.0

    def __post_init__(self):
        if len(self.p) != len(self.p_star):
            raise ValueError("p and p_star length mismatch")
        n_pos = int(np.sum(self.p_star))
        if len(self.t) != n_pos or len(self.t_star) != n_pos:
            raise ValueError("t rows must correspond to positive anchors")
        if self.n_cls < 1 or self.n_reg < 1:
            raise ValueError("normalizers must be >= 1")


def multitask_loss(batch: LossBatch) -> float:
    """Two-way log loss plus gated smooth-L1 box regression.

    L = (1/N_cls) sum_i L_cls(p_i, p*_i)
        + lambda (1/N_reg) sum_i p*_i L_reg(t_i, t*_i)
    """
    p = np.clip(np.asarray(batch.p, dtype=np.float64), PROB_FLOOR, 1.0 - PROB_FLOOR)
    p_star = np.asarray(batch.p_star, dtype=np.float64)
    cls = -(p_star * np.log(p) + (1.0 - p_star) * np.log(1.0 - p))
    loss = float(cls.sum()) / batch.n_cls
    if len(batch.t):
        reg = smooth_l1(np.asarray(batch.t) - np.asarray(batch.t_star)).sum()
        loss += batch.lam * float(reg) / batch.n_reg
    return loss


def multitask_loss_grads(batch: LossBatch):
    """(loss, dL/dp, dL/dt) for training; same formula as multitask_loss."""
    p = np.clip(np.asarray(batch.p, dtype=np.float64), PROB_FLOOR, 1.0 - PROB_FLOOR)
    p_star = np.asarray(batch.p_star, dtype=np.float64)
    dp = (-(p_star / p) + (1.0 - p_star) / (1.0 - p)) / batch.n_cls
    dt = np.zeros_like(np.asarray(batch.t, dtype=np.float64))
    if len(batch.t):
        diff = np.asarray(batch.t) - np.asarray(batch.t_star)
        dt = batch.lam * smooth_l1_grad(diff) / batch.n_reg
    return multitask_loss(batch), dp, dt


def distance_loss(d_hat, d_star, mask) -> float:
    """Mean smooth-L1 between raw predictions and encoded target distances.

    Only positions where mask is true contribute; 0 with no positives.
    """
    d_hat = np.asarray(d_hat, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if d_hat.shape != mask.shape:
        raise ValueError("mask shape must match predictions")
    if not mask.any():
        return 0.0
    targets = np.array([encode_distance(d) for d in np.asarray(d_star, dtype=np.float64)[mask]])
    return float(np.mean(smooth_l1(d_hat[mask] - targets)))


def distance_loss_grads(d_hat, d_star, mask):
    """(loss, dL/dd_hat) with the same contract as distance_loss."""
    d_hat = np.asarray(d_hat, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    grad = np.zeros_like(d_hat)
    if not mask.any():
        return 0.0, grad
    targets = np.array([encode_distance(d) for d in np.asarray(d_star, dtype=np.float64)[mask]])
    diff = d_hat[mask] - targets
    grad[mask] = smooth_l1_grad(diff) / diff.size
    return float(np.mean(smooth_l1(diff))), grad
