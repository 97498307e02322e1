"""Desk-scale feature extractor and pose initializer sharing one trunk.

Four 3x3 conv layers (3 -> 16 -> 32 -> 32 -> C_f) with ReLU after each;
the stride-2 reductions are 2x2 max pools after the first two convs (an
odd kernel cannot tile an even extent at stride 2 under the exact-tiling
conv contract), so feature maps land exactly on the heatmap grid.  A 1x1
head turns trunk features into per-joint score maps.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor
from .layers import ConvLayer

_TRUNK_CHANNELS = (16, 32, 32)


class BackboneInit:
    """Shared trunk plus the frame-1 pose-initializer head."""

    def __init__(self, rng: np.random.Generator, joints: int,
                 feat_channels: int = 32, stride: int = 4):
        if stride not in (1, 2, 4):
            raise DimensionError(f"unsupported feature stride {stride}")
        self.pools = {1: 0, 2: 1, 4: 2}[stride]
        channels = (3,) + _TRUNK_CHANNELS + (feat_channels,)
        self.convs = [
            ConvLayer(rng, f"backbone.conv{i + 1}", channels[i], channels[i + 1],
                      kernel=3, stride=1, padding=1)
            for i in range(4)
        ]
        self.head = ConvLayer(rng, "backbone.head", feat_channels, joints, kernel=1)
        self.stride = stride
        self.feat_channels = feat_channels
        self.joints = joints

    def extract_features(self, frames: Tensor) -> Tensor:
        """Trunk forward: [B, 3, H, W] -> [B, C_f, H/stride, W/stride]."""
        if frames.data.ndim != 4 or frames.shape[1] != 3:
            raise DimensionError(f"expected [B, 3, H, W] frames, got {frames.shape}")
        x = frames
        for i, conv in enumerate(self.convs):
            x = ad.relu(conv(x))
            if i < self.pools:
                x = ad.maxpool2(x)
        return x

    def pose_head(self, features: Tensor) -> Tensor:
        """Initializer head on trunk features: [B, C_f, h, w] -> [B, K, h, w]."""
        return self.head(features)

    def initial_pose(self, frames: Tensor) -> Tensor:
        return self.pose_head(self.extract_features(frames))

    def trunk_parameters(self) -> list[Parameter]:
        return [p for conv in self.convs for p in conv.parameters()]

    def head_parameters(self) -> list[Parameter]:
        return self.head.parameters()

    def parameters(self) -> list[Parameter]:
        return self.trunk_parameters() + self.head_parameters()
