"""Network building blocks: residual encoder stages, context attention,
and deconvolution decoder steps."""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from . import ops
from .layers import BatchNorm2d, ChannelLayerNorm, Conv2d, Deconv2d, Module
from .tensor import Tensor

__all__ = [
    "EncoderStem",
    "BasicBlock",
    "BottleneckBlock",
    "ResStage",
    "GlobalContextBlock",
    "ContextOutput",
    "DecoderBlock",
]


class EncoderStem(Module):
    """7x7/2 convolution + BN + ReLU + 3x3/2 max pool: input stride 4."""

    def __init__(self, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(3, out_channels, 7, rng, stride=2, padding=3, bias=False)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        y = ops.relu(self.bn(self.conv(x)))
        return ops.max_pool2d(y, kernel=3, stride=2, padding=1)


class BasicBlock(Module):
    """Two 3x3 convolutions with identity (or projected) shortcut."""

    def __init__(self, in_channels: int, out_channels: int, stride: int,
                 rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng,
                            stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng,
                            padding=1, bias=False)
        self.bn2 = BatchNorm2d(out_channels)
        self.proj_conv: Optional[Conv2d] = None
        if stride != 1 or in_channels != out_channels:
            self.proj_conv = Conv2d(in_channels, out_channels, 1, rng,
                                    stride=stride, bias=False)
            self.proj_bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        y = ops.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        shortcut = x if self.proj_conv is None else self.proj_bn(self.proj_conv(x))
        return ops.relu(ops.add(y, shortcut))


class BottleneckBlock(Module):
    """1x1 reduce, 3x3 (strided), 1x1 expand-by-4 with projected shortcut."""

    EXPANSION = 4

    def __init__(self, in_channels: int, width: int, stride: int,
                 rng: np.random.Generator):
        super().__init__()
        out_channels = width * self.EXPANSION
        self.conv1 = Conv2d(in_channels, width, 1, rng, bias=False)
        self.bn1 = BatchNorm2d(width)
        self.conv2 = Conv2d(width, width, 3, rng, stride=stride, padding=1,
                            bias=False)
        self.bn2 = BatchNorm2d(width)
        self.conv3 = Conv2d(width, out_channels, 1, rng, bias=False)
        self.bn3 = BatchNorm2d(out_channels)
        self.proj_conv: Optional[Conv2d] = None
        if stride != 1 or in_channels != out_channels:
            self.proj_conv = Conv2d(in_channels, out_channels, 1, rng,
                                    stride=stride, bias=False)
            self.proj_bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        y = ops.relu(self.bn1(self.conv1(x)))
        y = ops.relu(self.bn2(self.conv2(y)))
        y = self.bn3(self.conv3(y))
        shortcut = x if self.proj_conv is None else self.proj_bn(self.proj_conv(x))
        return ops.relu(ops.add(y, shortcut))


class ResStage(Module):
    """A run of residual blocks; downsampling happens in the first block."""

    def __init__(self, in_channels: int, width: int, num_blocks: int,
                 stride: int, block: str, rng: np.random.Generator):
        super().__init__()
        if block == "basic":
            blocks = [BasicBlock(in_channels, width, stride, rng)]
            for _ in range(num_blocks - 1):
                blocks.append(BasicBlock(width, width, 1, rng))
            self.out_channels = width
        elif block == "bottleneck":
            out = width * BottleneckBlock.EXPANSION
            blocks = [BottleneckBlock(in_channels, width, stride, rng)]
            for _ in range(num_blocks - 1):
                blocks.append(BottleneckBlock(out, width, 1, rng))
            self.out_channels = out
        else:
            raise ValueError(f"unknown block type {block!r}")
        self.blocks = blocks

    def forward(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


class ContextOutput(NamedTuple):
    enhanced: Tensor
    attention_logits: Tensor  # raw single-channel scores, pre-softmax


class GlobalContextBlock(Module):
    """Spatial-attention pooling plus a bottleneck channel transform.

    A 1x1 convolution scores every position; softmax over space turns the
    scores into pooling weights; the pooled (N, C, 1, 1) context passes
    through squeeze -> layer norm -> ReLU -> expand and is added back to
    every position.  The expand convolution starts at zero, so at build
    time the block is exactly the identity on its input.
    """

    def __init__(self, channels: int, ratio: int, rng: np.random.Generator):
        super().__init__()
        hidden = max(1, channels // ratio)
        # no bias on the scorer: softmax pooling is invariant to constant
        # logit shifts, so a bias would be a dead parameter
        self.score = Conv2d(channels, 1, 1, rng, bias=False)
        self.squeeze = Conv2d(channels, hidden, 1, rng)
        self.norm = ChannelLayerNorm(hidden)
        self.expand = Conv2d(hidden, channels, 1, rng, zero_init=True)

    def forward(self, x: Tensor) -> ContextOutput:
        logits = self.score(x)
        weights = ops.softmax_spatial(logits)
        context = ops.sum_spatial(ops.mul(x, weights))
        t = ops.relu(self.norm(self.squeeze(context)))
        t = self.expand(t)
        return ContextOutput(ops.add(x, t), logits)


class DecoderBlock(Module):
    """4x4/2 transposed convolution + BN + ReLU, doubling resolution.

    With ``skip_channels`` set, a lateral map is concatenated after the
    deconvolution and fused back to ``out_channels`` by a 3x3 conv + BN +
    ReLU.
    """

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator, skip_channels: Optional[int] = None):
        super().__init__()
        self.deconv = Deconv2d(in_channels, out_channels, 4, rng,
                               stride=2, padding=1)
        self.bn = BatchNorm2d(out_channels)
        self.fuse_conv: Optional[Conv2d] = None
        if skip_channels is not None:
            self.fuse_conv = Conv2d(out_channels + skip_channels, out_channels,
                                    3, rng, padding=1, bias=False)
            self.fuse_bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor, skip: Optional[Tensor] = None) -> Tensor:
        y = ops.relu(self.bn(self.deconv(x)))
        if skip is not None:
            if self.fuse_conv is None:
                raise ValueError("decoder got a lateral map but was built without "
                                 "a fusion path")
            y = ops.relu(self.fuse_bn(self.fuse_conv(
                ops.concat_channels([y, skip]))))
        return y
