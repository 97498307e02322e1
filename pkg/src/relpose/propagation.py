"""Pose-semantics distillation and cross-frame transfer.

Previous-frame features and heatmaps are fused by a 1x1 conv, distilled
through a conv/pool pyramid into a compact whole-pose template, and that
template is applied as a data-dependent depthwise filter on the next
frame's features (one template per batch element).  A final 1x1 conv turns
the matching response into per-joint pseudo heatmaps.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor
from .layers import ConvLayer

_POOL_STAGES = 3


class PoseSemanticsPropagator:
    """Fuse -> distill -> match pipeline between adjacent frames."""

    def __init__(self, rng: np.random.Generator, feat_channels: int, joints: int,
                 channels: int, distill_convs: int = 4):
        if distill_convs < _POOL_STAGES:
            raise DimensionError(
                f"distiller needs at least {_POOL_STAGES} convs, got {distill_convs}")
        self.fuse = ConvLayer(rng, "jrpsp.fuse", feat_channels + joints, channels, kernel=1)
        self.distill_convs = [
            ConvLayer(rng, f"jrpsp.distill{i + 1}", channels, channels, kernel=3, padding=1)
            for i in range(distill_convs)
        ]
        self.to_heatmaps = ConvLayer(rng, "jrpsp.head", channels, joints, kernel=1)
        self.channels = channels
        self.joints = joints
        self.feat_channels = feat_channels

    def aggregate(self, features: Tensor, heatmaps: Tensor) -> Tensor:
        """Concat [B,C_f,h,w] features with [B,K,h,w] heatmaps, 1x1-fuse to C."""
        if features.shape[0] != heatmaps.shape[0] or features.shape[2:] != heatmaps.shape[2:]:
            raise DimensionError(
                f"features {features.shape} and heatmaps {heatmaps.shape} misaligned")
        return self.fuse(ad.concat_channels([features, heatmaps]))

    def distill(self, x: Tensor) -> Tensor:
        """Conv/pool pyramid: [B,C,h,w] -> [B,C,h/8,w/8] pose template."""
        h, w = x.shape[2:]
        if h % (2 ** _POOL_STAGES) or w % (2 ** _POOL_STAGES):
            raise DimensionError(f"distill needs extents divisible by 8, got {h}x{w}")
        last = len(self.distill_convs) - 1
        for i, conv in enumerate(self.distill_convs):
            x = conv(x)
            if i < last:
                x = ad.relu(x)
            if i < _POOL_STAGES:
                x = ad.maxpool2(x)
        return x

    def propagate(self, template: Tensor, next_features: Tensor) -> Tensor:
        """Depthwise-match the template over next-frame features; emit K maps."""
        return self.to_heatmaps(ad.depthwise_xcorr(next_features, template))

    def receptive_field(self) -> int:
        """Input cells seen by one template cell (r <- r + (k-1)*jump; jump *= s)."""
        layers = []
        for i in range(len(self.distill_convs)):
            layers.append((3, 1))
            if i < _POOL_STAGES:
                layers.append((2, 2))
        r, jump = 1, 1
        for kernel, stride in layers:
            r += (kernel - 1) * jump
            jump *= stride
        return r

    def parameters(self) -> list[Parameter]:
        params = self.fuse.parameters()
        for conv in self.distill_convs:
            params += conv.parameters()
        return params + self.to_heatmaps.parameters()


def gradient_check_cases(rng: np.random.Generator) -> list:
    """Composite finite-difference case: fuse -> distill -> match end to end."""
    u = rng.uniform

    def build(ts):
        feats, maps, fuse_w, fuse_b, conv_w, head_w, next_feats = ts
        fused = ad.conv2d(ad.concat_channels([feats, maps]), fuse_w, fuse_b)
        x = fused
        for _ in range(_POOL_STAGES):
            x = ad.maxpool2(ad.relu(ad.conv2d(x, conv_w, padding=1)))
        template = ad.conv2d(x, conv_w, padding=1)
        response = ad.depthwise_xcorr(next_feats, template)
        out = ad.conv2d(response, head_w)
        return ad.mse(out, Tensor(np.zeros(out.shape), dtype=np.float64))

    c = 2
    return [("jrpsp.pipeline",
             build,
             [u(-1, 1, (1, c, 8, 8)), u(-1, 1, (1, 2, 8, 8)),
              u(-0.5, 0.5, (c, c + 2, 1, 1)), u(-0.1, 0.1, (c,)),
              u(-0.5, 0.5, (c, c, 3, 3)),
              u(-0.5, 0.5, (2, c, 1, 1)),
              u(-1, 1, (1, c, 8, 8))])]
