"""Tiny convolutional feature extractor: three stride-2 conv stages.

Architecture (fixed): 3x3 conv s2 3->8, leaky ReLU, 3x3 conv s2 8->16,
leaky ReLU, 3x3 conv s2 16->16, leaky ReLU.  Total stride 8, 16 output
channels.
"""

from __future__ import annotations

import numpy as np

from .layers import (
    FeatureMap,
    conv2d_backward,
    conv2d_forward,
    leaky_relu_backward,
    leaky_relu_forward,
)
from .params import ParamBlock


class TinyBackbone:
    STRIDE = 8
    CHANNELS = 16

    _LAYERS = [
        ("backbone.conv1", (3, 3, 3, 8)),
        ("backbone.conv2", (3, 3, 8, 16)),
        ("backbone.conv3", (3, 3, 16, 16)),
    ]

    def init_params(self, params: ParamBlock, rng: np.random.Generator) -> None:
        for name, shape in self._LAYERS:
            fan_in = shape[0] * shape[1] * shape[2]
            params.add(f"{name}.w", rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))
            params.add(f"{name}.b", np.zeros(shape[3]))

    def forward(self, image: np.ndarray, params: ParamBlock):
        """image: (H, W, 3) reals in [0, 1], H and W divisible by the stride."""
        h, w = image.shape[:2]
        if h % self.STRIDE or w % self.STRIDE:
            raise ValueError(f"image size {h}x{w} not divisible by stride {self.STRIDE}")
        x = np.asarray(image, dtype=np.float64)
        caches = []
        for name, _ in self._LAYERS:
            x, conv_cache = conv2d_forward(x, params.value(f"{name}.w"), params.value(f"{name}.b"), stride=2, pad=1)
            x, act_cache = leaky_relu_forward(x)
            caches.append((name, conv_cache, act_cache))
        return FeatureMap(data=x, stride=self.STRIDE), caches

    def backward(self, dfm: np.ndarray, caches, params: ParamBlock) -> None:
        dx = dfm
        for name, conv_cache, act_cache in reversed(caches):
            dx = leaky_relu_backward(dx, act_cache)
            dx, dw, db = conv2d_backward(dx, conv_cache)
            params.accumulate(f"{name}.w", dw)
            params.accumulate(f"{name}.b", db)
