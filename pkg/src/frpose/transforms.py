"""Similarity crops between original-image and network-input frames,
plus horizontal-flip utilities for test-time averaging.

A :class:`CropTransform` is a 3x3 matrix mapping original pixel coordinates
to crop pixel coordinates (continuous, pixel centers at integers).  Crops
are built as: center the (aspect-corrected, margin-expanded) box, zoom so it
fills the output, optionally mirror, then rotate about the crop center —
similarity transforms only, so aspect is always preserved.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Sequence

import numpy as np

from .heatmaps import JointSet

__all__ = [
    "CropTransform",
    "build_crop_transform",
    "transform_joints",
    "warp_image",
    "flip_images",
    "unflip_heatmaps",
    "flip_average",
]


@dataclasses.dataclass
class CropTransform:
    matrix: np.ndarray  # (3, 3) float64, original px -> crop px
    flipped: bool = False

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (3, 3):
            raise ValueError(f"transform matrix must be 3x3, got "
                             f"{self.matrix.shape}")
        if abs(np.linalg.det(self.matrix)) < 1e-12:
            raise ValueError("degenerate (non-invertible) crop transform")

    def apply_xy(self, xy: np.ndarray) -> np.ndarray:
        pts = np.asarray(xy, dtype=np.float64)
        ones = np.ones((*pts.shape[:-1], 1))
        homo = np.concatenate([pts, ones], axis=-1)
        out = homo @ self.matrix.T
        return out[..., :2]

    def invert(self) -> "CropTransform":
        return CropTransform(np.linalg.inv(self.matrix), flipped=self.flipped)


def build_crop_transform(box: Sequence[float], out_size: tuple[int, int],
                         margin: float = 1.25, scale: float = 1.0,
                         rotation_deg: float = 0.0,
                         flip: bool = False) -> CropTransform:
    """Map a person box to a crop of ``out_size`` = (height, width).

    The box is first expanded to the output aspect ratio, then by
    ``margin``.  ``scale`` multiplies the person's rendered size (1.3 draws
    the person 30% larger in the crop); ``rotation_deg`` spins the content
    about the crop center; ``flip`` mirrors horizontally about the crop
    center.
    """
    x, y, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise ValueError(f"box extents must be positive, got {box!r}")
    out_h, out_w = out_size
    aspect = out_w / out_h
    if w / h < aspect:
        w = h * aspect
    else:
        h = w / aspect
    w *= margin
    h *= margin
    zoom = scale * out_w / w
    if zoom <= 0 or not math.isfinite(zoom):
        raise ValueError(f"degenerate zoom {zoom} from box {box!r}")

    cx, cy = x + float(box[2]) / 2.0, y + float(box[3]) / 2.0
    ox, oy = (out_w - 1) / 2.0, (out_h - 1) / 2.0
    theta = math.radians(rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)

    def translate(tx, ty):
        return np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1]], dtype=np.float64)

    rot = np.array([[cos_t, -sin_t, 0], [sin_t, cos_t, 0], [0, 0, 1]],
                   dtype=np.float64)
    mirror = np.diag([-1.0, 1.0, 1.0]) if flip else np.eye(3)
    zoom_m = np.diag([zoom, zoom, 1.0])
    matrix = translate(ox, oy) @ rot @ mirror @ zoom_m @ translate(-cx, -cy)
    return CropTransform(matrix, flipped=flip)


def transform_joints(joints: JointSet, transform: CropTransform,
                     flip_pairs: Sequence[tuple[int, int]] = (),
                     frame: str = "crop") -> JointSet:
    """Map joint coordinates through a transform; a mirrored transform also
    swaps each (left, right) pair so joint k keeps its anatomical meaning."""
    xy = transform.apply_xy(joints.xy)
    vis = joints.visibility.copy()
    if transform.flipped:
        for a, b in flip_pairs:
            xy[[a, b]] = xy[[b, a]]
            vis[[a, b]] = vis[[b, a]]
    return JointSet(xy, vis, frame=frame)


def warp_image(image: np.ndarray, transform: CropTransform,
               out_size: tuple[int, int]) -> np.ndarray:
    """Resample a (C, H, W) image into the crop frame (bilinear, zero fill)."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"expected (C, H, W) image, got {image.shape}")
    c, h, w = image.shape
    out_h, out_w = out_size
    inv = np.linalg.inv(transform.matrix)
    ys, xs = np.meshgrid(np.arange(out_h, dtype=np.float64),
                         np.arange(out_w, dtype=np.float64), indexing="ij")
    src_x = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    src_y = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]

    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = (src_x - x0).astype(image.dtype if image.dtype.kind == "f"
                             else np.float64)
    fy = (src_y - y0).astype(fx.dtype)

    out = np.zeros((c, out_h, out_w), dtype=np.result_type(image.dtype, fx.dtype))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        yi = y0 + dy
        y_ok = (yi >= 0) & (yi < h)
        yc = np.clip(yi, 0, h - 1)
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            ok = y_ok & (xi >= 0) & (xi < w)
            xc = np.clip(xi, 0, w - 1)
            weight = wy * wx * ok
            out += weight[None] * image[:, yc, xc]
    return out.astype(image.dtype, copy=False)


def flip_images(images: np.ndarray) -> np.ndarray:
    """Mirror a (..., W) batch along its width axis."""
    return np.ascontiguousarray(images[..., ::-1])


def unflip_heatmaps(maps: np.ndarray, flip_pairs: Sequence[tuple[int, int]],
                    aligned: bool = True) -> np.ndarray:
    """Map heatmaps of a mirrored input back to the original frame.

    Under the center-aligned grid convention a plain cell mirror plus
    left/right map swap is the *exact* inverse of mirroring the input.
    ``aligned=False`` reproduces the historical off-by-one variant (mirror,
    then shift one cell toward +x, duplicating the first column), whose
    decoded peaks land up to one cell away — an error that grows with
    stride when measured in input pixels.
    """
    out = np.ascontiguousarray(maps[..., ::-1])
    perm = np.arange(maps.shape[1])
    for a, b in flip_pairs:
        perm[a], perm[b] = b, a
    out = out[:, perm]
    if not aligned:
        shifted = np.empty_like(out)
        shifted[..., 1:] = out[..., :-1]
        shifted[..., 0] = out[..., 0]
        out = shifted
    return out


def flip_average(forward_fn: Callable[[np.ndarray], np.ndarray],
                 images: np.ndarray,
                 flip_pairs: Sequence[tuple[int, int]],
                 aligned: bool = True) -> np.ndarray:
    """Average heatmaps over the input and its horizontal mirror."""
    base = forward_fn(images)
    mirrored = forward_fn(flip_images(images))
    restored = unflip_heatmaps(mirrored, flip_pairs, aligned=aligned)
    if restored.shape != base.shape:
        raise ValueError(f"forward_fn changed shape under flip: "
                         f"{base.shape} vs {restored.shape}")
    return 0.5 * (base + restored)
