"""Minimal differentiable substrate: layers, heads, losses, gradient checks."""

from .backbone import TinyBackbone
from .gradcheck import GradCheckReport, grad_check
from .heads import RprHead, RpnHead, RpnOutput, SecondStageHead, make_anchor_grid
from .layers import FeatureMap, logistic, roi_pool, roi_pool_backward, softmax
from .losses import (
    LossBatch,
    cross_entropy,
    decode_distance,
    distance_loss,
    encode_distance,
    multitask_loss,
    smooth_l1,
)
from .params import ParamBlock, sgd_step

__all__ = [
    "FeatureMap",
    "GradCheckReport",
    "LossBatch",
    "ParamBlock",
    "RpnHead",
    "RpnOutput",
    "RprHead",
    "SecondStageHead",
    "TinyBackbone",
    "cross_entropy",
    "decode_distance",
    "distance_loss",
    "encode_distance",
    "grad_check",
    "logistic",
    "make_anchor_grid",
    "multitask_loss",
    "roi_pool",
    "roi_pool_backward",
    "sgd_step",
    "smooth_l1",
    "softmax",
]
