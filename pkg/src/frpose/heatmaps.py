"""Gaussian heatmap targets and peak decoding.

Grid convention (used consistently by encode and decode): cell ``c`` of a
stride-``s`` map covers input pixels ``[c*s, (c+1)*s)`` and its center sits
at ``c*s + s/2 - 0.5``.  Targets are the unnormalized Gaussian
``exp(-((x-jx)^2 + (y-jy)^2) / (2*sigma^2))`` evaluated *continuously* at
those centers, truncated outside a 3-sigma window: the peak value is 1.0
only when a joint lies exactly on a cell center, which is what makes
sub-cell information recoverable at decode time.

``sigma`` follows the input height: 8 px at height 256 (so 12 at 384 and
2 at 64).
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import ops
from .tensor import Tensor

__all__ = [
    "HeatmapStack",
    "JointSet",
    "sigma_for_input",
    "grid_to_pixel",
    "pixel_to_grid",
    "encode_heatmaps",
    "encode_batch",
    "decode_heatmaps",
    "decode_batch",
    "heatmap_loss",
    "dump_heatmaps",
    "load_heatmap_dump",
]

# visibility flags, COCO-style
NOT_LABELED = 0
LABELED_HIDDEN = 1
LABELED_VISIBLE = 2


@dataclasses.dataclass
class JointSet:
    """Keypoint coordinates with per-joint visibility, tagged by frame."""

    xy: np.ndarray          # (K, 2) float, x then y
    visibility: np.ndarray  # (K,) int: 0 unlabeled, 1 hidden, 2 visible
    frame: str = "crop"

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        self.visibility = np.asarray(self.visibility, dtype=np.int64).reshape(-1)
        if len(self.visibility) != len(self.xy):
            raise ValueError(f"{len(self.xy)} joints but "
                             f"{len(self.visibility)} visibility flags")

    @property
    def num_joints(self) -> int:
        return len(self.xy)

    def labeled(self) -> np.ndarray:
        return self.visibility > 0


@dataclasses.dataclass
class HeatmapStack:
    """One instance's per-joint maps plus the geometry to read them."""

    maps: np.ndarray  # (K, H, W) float32
    stride: float
    sigma: float

    def __post_init__(self):
        self.maps = np.asarray(self.maps)
        if self.maps.ndim != 3:
            raise ValueError(f"maps must be (K, H, W), got {self.maps.shape}")


def sigma_for_input(input_height: int) -> float:
    """Target spread in input pixels: 8 at height 256, scaled linearly."""
    return 8.0 * input_height / 256.0


def grid_to_pixel(index, stride: float):
    return np.asarray(index, dtype=np.float64) * stride + stride / 2.0 - 0.5


def pixel_to_grid(px, stride: float):
    return (np.asarray(px, dtype=np.float64) + 0.5 - stride / 2.0) / stride


def encode_heatmaps(joints: JointSet, grid_height: int, grid_width: int,
                    stride: float,
                    sigma: float) -> tuple[HeatmapStack, np.ndarray]:
    """Render per-joint Gaussian targets; returns (stack, per-joint weights).

    ``grid_height``/``grid_width`` are heatmap cells, i.e. input extent
    divided by ``stride`` — joint coordinates stay in input pixels.  Only
    the given instance's joints are rendered.  A joint gets weight 0 (and
    an all-zero map) when it is unlabeled or its 3-sigma window misses the
    map entirely; everything else gets weight 1.
    """
    k = joints.num_joints
    maps = np.zeros((k, grid_height, grid_width), dtype=np.float32)
    weights = np.zeros(k, dtype=np.float32)
    radius = math.ceil(3.0 * sigma / stride)
    for j in range(k):
        if joints.visibility[j] <= 0:
            continue
        jx, jy = joints.xy[j]
        cx = int(round(pixel_to_grid(jx, stride).item()))
        cy = int(round(pixel_to_grid(jy, stride).item()))
        x0, x1 = max(cx - radius, 0), min(cx + radius, grid_width - 1)
        y0, y1 = max(cy - radius, 0), min(cy + radius, grid_height - 1)
        if x0 > x1 or y0 > y1:
            continue  # window fell off the map: unsupervisable
        xs = grid_to_pixel(np.arange(x0, x1 + 1), stride)
        ys = grid_to_pixel(np.arange(y0, y1 + 1), stride)
        g = np.exp(-((xs[None, :] - jx) ** 2 + (ys[:, None] - jy) ** 2)
                   / (2.0 * sigma ** 2))
        maps[j, y0:y1 + 1, x0:x1 + 1] = g.astype(np.float32)
        weights[j] = 1.0
    return HeatmapStack(maps, stride, sigma), weights


def encode_batch(joint_sets, grid_height: int, grid_width: int, stride: float,
                 sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-instance encodings into (N, K, H, W) targets + (N, K) weights."""
    targets, weights = [], []
    for js in joint_sets:
        stack, w = encode_heatmaps(js, grid_height, grid_width, stride, sigma)
        targets.append(stack.maps)
        weights.append(w)
    return np.stack(targets), np.stack(weights)


def decode_heatmaps(stack: HeatmapStack,
                    mode: str = "argmax") -> tuple[JointSet, np.ndarray]:
    """Read peak positions back out of a heatmap stack.

    ``argmax`` returns the peak cell's center (ties resolve to the smallest
    row, then column).  ``subpixel`` additionally shifts a quarter cell
    toward the larger of the two axis neighbors, the usual cheap correction
    for the quantization bias of argmax.
    """
    if mode not in ("argmax", "subpixel"):
        raise ValueError(f"unknown decode mode {mode!r}")
    maps = stack.maps
    k, h, w = maps.shape
    xy = np.zeros((k, 2), dtype=np.float64)
    conf = np.zeros(k, dtype=np.float64)
    for j in range(k):
        flat = int(maps[j].argmax())
        r, c = divmod(flat, w)
        conf[j] = maps[j, r, c]
        col, row = float(c), float(r)
        if mode == "subpixel":
            if 0 < c < w - 1:
                col += 0.25 * np.sign(maps[j, r, c + 1] - maps[j, r, c - 1])
            if 0 < r < h - 1:
                row += 0.25 * np.sign(maps[j, r + 1, c] - maps[j, r - 1, c])
        xy[j, 0] = grid_to_pixel(col, stack.stride)
        xy[j, 1] = grid_to_pixel(row, stack.stride)
    vis = np.full(k, LABELED_VISIBLE, dtype=np.int64)
    return JointSet(xy, vis, frame="crop"), conf


def decode_batch(maps: np.ndarray, stride: float,
                 mode: str = "argmax") -> list[tuple[JointSet, np.ndarray]]:
    return [decode_heatmaps(HeatmapStack(m, stride, 0.0), mode=mode)
            for m in maps]


def heatmap_loss(pred: Tensor, targets: np.ndarray, weights: np.ndarray,
                 reduction: str = "mean") -> Tensor:
    """Weighted per-map MSE between predictions and encoded targets."""
    return ops.weighted_mse(pred, Tensor(np.asarray(targets, dtype=np.float32)),
                            weights, reduction=reduction)


# ---------------------------------------------------------------------------
# delimited text dumps


def dump_heatmaps(path: str, stack: HeatmapStack) -> None:
    """Write a stack as delimited text; values round-trip float32 exactly."""
    k, h, w = stack.maps.shape
    with open(path, "w") as fh:
        fh.write(f"# frpose-heatmaps joints={k} height={h} width={w} "
                 f"stride={stack.stride:.9g} sigma={stack.sigma:.9g}\n")
        for j in range(k):
            fh.write(f"# joint {j}\n")
            for row in stack.maps[j]:
                fh.write(",".join(f"{v:.9g}" for v in row) + "\n")


def load_heatmap_dump(path: str) -> HeatmapStack:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# frpose-heatmaps "):
            raise ValueError(f"{path} is not a heatmap dump")
        fields = dict(part.split("=") for part in header.split()[2:])
        k, h, w = (int(fields[n]) for n in ("joints", "height", "width"))
        maps = np.zeros((k, h, w), dtype=np.float32)
        for j in range(k):
            marker = fh.readline()
            if not marker.startswith("# joint"):
                raise ValueError(f"malformed dump: expected joint marker, "
                                 f"got {marker!r}")
            for r in range(h):
                maps[j, r] = np.array(fh.readline().split(","),
                                      dtype=np.float32)
    return HeatmapStack(maps, float(fields["stride"]), float(fields["sigma"]))
