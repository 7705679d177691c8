"""Network assembly for the encoder-decoder pose estimator and its ablations.

Variants
--------
``baseline``
    Classic 3-decoder simple baseline: residual encoder to stride 32, three
    4x4/2 deconvolutions back to stride 4, 1x1 head.
``fullres``
    Five decoders instead of three, so the head runs at stride 1 and the
    output heatmaps match the input extents exactly.
``fullres_gcb``
    Adds global-context attention blocks after all four encoder stages and
    after the first three decoders.
``fullres_gcb_skip``
    Additionally concatenates the raw stage-1/2/3 encoder maps onto the
    matching-resolution decoder outputs (plain lateral skips).
``fullres_gcb_fusion``
    Instead of raw skips, collects the attention-enhanced stage-1/2/3 maps
    into a single gated multi-scale map and distributes it to decoders
    2/3/4 (strides 8/4/2).
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from .blocks import DecoderBlock, EncoderStem, GlobalContextBlock, ResStage
from .fusion import MultiScaleFusion
from .layers import Conv2d, Module
from .tensor import ShapeError, Tensor

__all__ = [
    "VARIANTS",
    "ENCODER_PRESETS",
    "NetworkConfig",
    "NetworkStats",
    "PoseNetwork",
    "build_network",
    "count_params",
]

VARIANTS = (
    "baseline",
    "fullres",
    "fullres_gcb",
    "fullres_gcb_skip",
    "fullres_gcb_fusion",
)

# name -> (block type, blocks per stage, stem/base width)
ENCODER_PRESETS = {
    "resnet18": ("basic", (2, 2, 2, 2), 64),
    "resnet34": ("basic", (3, 4, 6, 3), 64),
    "resnet50": ("bottleneck", (3, 4, 6, 3), 64),
}


@dataclasses.dataclass
class NetworkConfig:
    variant: str = "fullres_gcb_fusion"
    block: str = "basic"
    stage_blocks: tuple[int, int, int, int] = (3, 4, 6, 3)
    base_width: int = 64
    num_joints: int = 17
    input_size: tuple[int, int] = (256, 192)  # (height, width)
    decoder_channels: tuple[int, ...] = (256, 256, 256, 128, 32)
    gcb_ratio: int = 16
    fusion_channels: int = 128
    gate: str = "sigmoid"
    fuse_attention_logits: bool = True

    @classmethod
    def from_preset(cls, encoder: str, **overrides) -> "NetworkConfig":
        if encoder not in ENCODER_PRESETS:
            raise ValueError(f"unknown encoder preset {encoder!r}; "
                             f"have {sorted(ENCODER_PRESETS)}")
        block, stage_blocks, base_width = ENCODER_PRESETS[encoder]
        cfg = cls(block=block, stage_blocks=stage_blocks, base_width=base_width,
                  **overrides)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; have {VARIANTS}")
        if self.block not in ("basic", "bottleneck"):
            raise ValueError(f"unknown block {self.block!r}")
        if len(self.stage_blocks) != 4 or min(self.stage_blocks) < 1:
            raise ValueError(f"stage_blocks must be 4 positive ints, "
                             f"got {self.stage_blocks}")
        h, w = self.input_size
        if h % 32 or w % 32 or h < 32 or w < 32:
            raise ValueError(f"input extents must be positive multiples of 32, "
                             f"got {self.input_size}")
        if self.num_joints < 1:
            raise ValueError("num_joints must be >= 1")
        if len(self.decoder_channels) < self.num_decoders:
            raise ValueError(f"{self.variant} needs {self.num_decoders} decoder "
                             f"channel entries, got {self.decoder_channels}")
        if self.gcb_ratio < 1:
            raise ValueError("gcb_ratio must be >= 1")
        if self.fusion_channels < 1:
            raise ValueError("fusion_channels must be >= 1")
        if self.gate not in ("sigmoid", "relu"):
            raise ValueError(f"unknown gate {self.gate!r}")

    # -- derived ------------------------------------------------------------

    @property
    def num_decoders(self) -> int:
        return 3 if self.variant == "baseline" else 5

    @property
    def output_stride(self) -> int:
        return 4 if self.variant == "baseline" else 1

    @property
    def has_gcb(self) -> bool:
        return self.variant in ("fullres_gcb", "fullres_gcb_skip",
                                "fullres_gcb_fusion")

    @property
    def has_skips(self) -> bool:
        return self.variant == "fullres_gcb_skip"

    @property
    def has_fusion(self) -> bool:
        return self.variant == "fullres_gcb_fusion"

    @property
    def stage_channels(self) -> tuple[int, int, int, int]:
        widths = tuple(self.base_width * (1 << i) for i in range(4))
        if self.block == "bottleneck":
            return tuple(w * 4 for w in widths)
        return widths

    @property
    def heatmap_size(self) -> tuple[int, int]:
        s = self.output_stride
        return (self.input_size[0] // s, self.input_size[1] // s)


@dataclasses.dataclass
class NetworkStats:
    total: int
    by_component: dict[str, int]


class PoseNetwork(Module):
    """Encoder-decoder keypoint heatmap regressor; see module docstring."""

    def __init__(self, config: NetworkConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        width = config.base_width

        self.stem = EncoderStem(width, rng)
        stage_in = width
        stages = []
        for i, num_blocks in enumerate(config.stage_blocks):
            stage = ResStage(stage_in, width * (1 << i), num_blocks,
                             stride=1 if i == 0 else 2, block=config.block,
                             rng=rng)
            stages.append(stage)
            stage_in = stage.out_channels
        self.stages = stages
        stage_channels = config.stage_channels

        if config.has_gcb:
            self.stage_gcbs = [GlobalContextBlock(c, config.gcb_ratio, rng)
                               for c in stage_channels]
        else:
            self.stage_gcbs = []

        if config.has_fusion:
            self.fusion = MultiScaleFusion(stage_channels[:3],
                                           config.fusion_channels, rng,
                                           gate=config.gate)
        else:
            self.fusion = None

        dec_channels = config.decoder_channels[:config.num_decoders]
        dec_in = stage_channels[3]
        decoders = []
        for i, out_c in enumerate(dec_channels):
            skip_c: Optional[int] = None
            if config.has_skips and i < 3:
                # decoder i lands at the resolution of stage 3-i
                skip_c = stage_channels[2 - i]
            if config.has_fusion and i in (1, 2, 3):
                skip_c = config.fusion_channels
            decoders.append(DecoderBlock(dec_in, out_c, rng, skip_channels=skip_c))
            dec_in = out_c
        self.decoders = decoders

        if config.has_gcb:
            self.decoder_gcbs = [GlobalContextBlock(dec_channels[i],
                                                    config.gcb_ratio, rng)
                                 for i in range(3)]
        else:
            self.decoder_gcbs = []

        self.head = Conv2d(dec_in, config.num_joints, 1, rng, bias=True)

    def forward(self, images: Tensor) -> Tensor:
        n, c, h, w = images.shape
        if c != 3:
            raise ShapeError(f"expected 3-channel images, got {images.shape}")
        if h % 32 or w % 32:
            raise ShapeError(f"input extents must be multiples of 32, got "
                             f"({h}, {w})")
        cfg = self.config

        x = self.stem(images)
        raw_stages = []      # pre-attention, for plain skips
        enhanced = []        # post-attention (== raw when no GCBs)
        attention = []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            raw_stages.append(x)
            if cfg.has_gcb:
                x, logits = self.stage_gcbs[i](x)
                attention.append(logits)
            enhanced.append(x)

        refined: Optional[Tensor] = None
        if cfg.has_fusion:
            att = attention[:3]
            if not cfg.fuse_attention_logits:
                from .ops import softmax_spatial
                att = [softmax_spatial(a) for a in att]
            refined = self.fusion.collect(enhanced[:3], att)

        y = x
        for i, decoder in enumerate(self.decoders):
            skip: Optional[Tensor] = None
            if cfg.has_skips and i < 3:
                skip = raw_stages[2 - i]
            if cfg.has_fusion and i in (1, 2, 3):
                # decoder outputs land at strides 16, 8, 4, 2, 1
                skip = self.fusion.distribute(refined, target_stride=16 >> i)
            y = decoder(y, skip)
            if cfg.has_gcb and i < 3:
                y, _ = self.decoder_gcbs[i](y)
        return self.head(y)

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Eval-mode forward from a numpy batch; no graph, no stat updates."""
        was_training = self.training
        self.eval()
        try:
            out = self.forward(Tensor(np.asarray(images)))
        finally:
            self.train(was_training)
        return out.data


def build_network(config: NetworkConfig, seed: int = 0) -> PoseNetwork:
    """Deterministically materialize a network: same seed, same weights."""
    return PoseNetwork(config, np.random.default_rng(seed))


def count_params(net: PoseNetwork) -> NetworkStats:
    by_component: dict[str, int] = {}
    total = 0
    for name, p in net.named_parameters():
        group = name.split(".", 1)[0]
        size = int(p.data.size)
        by_component[group] = by_component.get(group, 0) + size
        total += size
    return NetworkStats(total=total, by_component=by_component)
