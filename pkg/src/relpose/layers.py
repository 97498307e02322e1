"""Parameterized layers shared by the network modules."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class ConvLayer:
    """Conv2d with He-initialized weight and optional zero-initialized bias."""

    def __init__(self, rng: np.random.Generator, name: str, cin: int, cout: int,
                 kernel: int, stride: int = 1, padding: int = 0, bias: bool = True):
        fan_in = cin * kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        self.weight = Parameter(rng.normal(0.0, std, size=(cout, cin, kernel, kernel)),
                                f"{name}.weight")
        self.bias = Parameter(np.zeros(cout), f"{name}.bias") if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        b = self.bias.tensor if self.bias is not None else None
        return ad.conv2d(x, self.weight.tensor, b, stride=self.stride, padding=self.padding)

    def parameters(self) -> list[Parameter]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]


class BatchNorm2d:
    """Batch normalization with affine parameters and running statistics."""

    def __init__(self, name: str, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels), f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels), f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps
        self.name = name

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ad.batchnorm2d(x, self.gamma.tensor, self.beta.tensor,
                              running_mean=self.running_mean, running_var=self.running_var,
                              training=training, momentum=self.momentum, eps=self.eps)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]
