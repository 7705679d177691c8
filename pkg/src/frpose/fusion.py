"""Scale-aware multi-level feature collection and distribution.

``collect`` pulls the three early encoder maps (strides 4, 8, 16) up to the
finest of them, fuses them with a 3x3 conv + BN + ReLU, and gates the result
with a single-channel mask built from the matching spatial-attention score
maps.  ``distribute`` then resamples the gated map to whichever decoder
stride asks for it; stride 4 is served as-is.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import ops
from .layers import BatchNorm2d, Conv2d, Module
from .tensor import ShapeError, Tensor

__all__ = ["MultiScaleFusion", "DISTRIBUTE_STRIDES"]

# strides (relative to the network input) this module can serve, all derived
# from the collected map that lives at stride 4
DISTRIBUTE_STRIDES = (2, 4, 8)


class MultiScaleFusion(Module):
    def __init__(self, in_channels: Sequence[int], fusion_channels: int,
                 rng: np.random.Generator, gate: str = "sigmoid"):
        super().__init__()
        if gate not in ("sigmoid", "relu"):
            raise ValueError(f"unknown gate {gate!r}; expected 'sigmoid' or 'relu'")
        self.gate = gate
        self.in_channels = tuple(in_channels)
        self.fusion_channels = fusion_channels
        self.feat_conv = Conv2d(sum(in_channels), fusion_channels, 3, rng,
                                padding=1, bias=False)
        self.feat_bn = BatchNorm2d(fusion_channels)
        self.gate_conv = Conv2d(len(in_channels), 1, 3, rng, padding=1, bias=False)
        self.gate_bn = BatchNorm2d(1)

    def collect(self, features: Sequence[Tensor],
                attention: Sequence[Tensor]) -> Tensor:
        """Fuse per-stage features, gated by their fused attention maps.

        ``features[0]`` is the finest map; each following one must be half
        its size (the usual encoder ladder).  ``attention`` carries the
        matching single-channel score maps.
        """
        if len(features) != len(self.in_channels) or len(attention) != len(features):
            raise ShapeError(
                f"collect: expected {len(self.in_channels)} feature/attention "
                f"pairs, got {len(features)}/{len(attention)}")
        n, _, h, w = features[0].shape
        for i, (feat, att) in enumerate(zip(features, attention)):
            fn, fc, fh, fw = feat.shape
            if fc != self.in_channels[i]:
                raise ShapeError(f"collect: level {i} has {fc} channels, "
                                 f"expected {self.in_channels[i]}")
            if (fn, fh, fw) != (n, h >> i, w >> i):
                raise ShapeError(f"collect: level {i} extents {feat.shape} break "
                                 f"the halving ladder from {features[0].shape}")
            if att.shape != (fn, 1, fh, fw):
                raise ShapeError(f"collect: attention {i} shape {att.shape} does "
                                 f"not match its feature map")

        ups = [features[0]]
        ups += [ops.bilinear_resize(f, h, w) for f in features[1:]]
        fused = ops.relu(self.feat_bn(self.feat_conv(ops.concat_channels(ups))))

        att_ups = [attention[0]]
        att_ups += [ops.bilinear_resize(a, h, w) for a in attention[1:]]
        mask = self.gate_bn(self.gate_conv(ops.concat_channels(att_ups)))
        mask = ops.sigmoid(mask) if self.gate == "sigmoid" else ops.relu(mask)
        return ops.mul(fused, mask)

    def distribute(self, refined: Tensor, target_stride: int) -> Tensor:
        """Resample the collected map (stride 4) to ``target_stride``."""
        if target_stride not in DISTRIBUTE_STRIDES:
            raise ShapeError(f"distribute: stride {target_stride} not in "
                             f"{DISTRIBUTE_STRIDES}")
        if target_stride == 4:
            return refined
        _, _, h, w = refined.shape
        if target_stride == 8:
            return ops.bilinear_resize(refined, h // 2, w // 2)
        return ops.bilinear_resize(refined, h * 2, w * 2)
