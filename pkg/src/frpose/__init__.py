"""frpose: full-resolution encoder-decoder pose estimation, from scratch.

A small numpy-backed stack: reverse-mode autodiff over 4-D tensors, a
residual encoder with deconvolution decoders (plus context-attention and
multi-scale fusion ablations), Gaussian heatmap encoding/decoding, and
OKS-based AP/AR evaluation, wired together by a config-driven CLI.
"""

from .tensor import Graph, ShapeError, Tensor, precision
from .network import (NetworkConfig, PoseNetwork, VARIANTS, build_network,
                      count_params)

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "NetworkConfig",
    "PoseNetwork",
    "ShapeError",
    "Tensor",
    "VARIANTS",
    "build_network",
    "count_params",
    "precision",
    "__version__",
]
