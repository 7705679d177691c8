"""Parameterized layers and the small module system that holds them.

A :class:`Module` owns parameters (tensors with ``requires_grad``), buffers
(plain numpy arrays such as batch-norm running statistics) and sub-modules,
discovered by walking instance attributes in definition order.  All random
initialization draws from an explicit ``numpy.random.Generator``, so a build
seed fully determines every weight.
"""

from __future__ import annotations

from typing import ClassVar, Iterator, Optional

import numpy as np

from . import ops
from .tensor import Tensor, default_dtype

__all__ = [
    "Module",
    "Conv2d",
    "Deconv2d",
    "BatchNorm2d",
    "ChannelLayerNorm",
    "he_uniform",
]


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(default_dtype())


class Module:
    """Base class for anything with parameters; mirrors the usual conventions
    (``named_parameters``, ``train``/``eval``) without any framework import."""

    buffer_names: ClassVar[tuple[str, ...]] = ()

    def __init__(self):
        self.training = True

    # -- discovery ----------------------------------------------------------

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
        for key, child in self._children():
            yield from child.named_parameters(prefix + key + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in type(self).buffer_names:
            yield prefix + key, getattr(self, key)
        for key, child in self._children():
            yield from child.named_buffers(prefix + key + ".")

    # -- mode ---------------------------------------------------------------

    def train(self, flag: bool = True) -> "Module":
        self.training = flag
        for _, child in self._children():
            child.train(flag)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    # -- call ---------------------------------------------------------------

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 bias: bool = True, zero_init: bool = False):
        super().__init__()
        self.stride = stride
        self.padding = padding
        shape = (out_channels, in_channels, kernel, kernel)
        if zero_init:
            weight = np.zeros(shape, dtype=default_dtype())
        else:
            weight = he_uniform(rng, shape, in_channels * kernel * kernel)
        self.weight = Tensor(weight, requires_grad=True)
        self.bias: Optional[Tensor] = None
        if bias:
            self.bias = Tensor(np.zeros((1, out_channels, 1, 1), dtype=default_dtype()),
                               requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias,
                          stride=self.stride, padding=self.padding)


class Deconv2d(Module):
    """Transposed convolution layer; weight layout is (in, out, k, k)."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 output_padding: int = 0):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        shape = (in_channels, out_channels, kernel, kernel)
        self.weight = Tensor(he_uniform(rng, shape, in_channels * kernel * kernel),
                             requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.deconv2d(x, self.weight, stride=self.stride,
                            padding=self.padding,
                            output_padding=self.output_padding)


class BatchNorm2d(Module):
    buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones((1, channels, 1, 1), dtype=default_dtype()),
                            requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1, 1), dtype=default_dtype()),
                           requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=default_dtype())
        self.running_var = np.ones(channels, dtype=default_dtype())

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta,
                              self.running_mean, self.running_var,
                              training=self.training,
                              momentum=self.momentum, eps=self.eps)


class ChannelLayerNorm(Module):
    """Layer norm across channels of a (N, C, 1, 1) tensor."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Tensor(np.ones((1, channels, 1, 1), dtype=default_dtype()),
                            requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1, 1), dtype=default_dtype()),
                           requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm_channels(x, self.gamma, self.beta, eps=self.eps)
