"""Object-keypoint-similarity matching and AP/AR summarization.

OKS between a predicted and an annotated pose is the mean, over labeled
joints, of ``exp(-d_i^2 / (2 * area * k_i^2))`` — ``d_i`` the pixel error of
joint ``i``, ``area`` the instance's scale squared, and ``k_i`` a per-joint
tolerance constant.  Detections are greedily matched to ground truths per
image in descending score order at each of the 10 thresholds 0.50:0.05:0.95,
and precision is averaged at 101 recall points, mirroring the standard COCO
keypoint protocol.

Annotated instances with no labeled joints are ignored (they can never be
matched); a detection matched only to an ignored instance is dropped from
the precision/recall bookkeeping instead of counting as a false positive.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "COCO_JOINT_SPREADS",
    "OksParams",
    "Prediction",
    "ImageRecord",
    "oks",
    "collect_records",
    "summarize",
    "metric_table",
    "METRIC_KINDS",
]

# Per-joint tolerance for the 17 standard COCO joints: twice the per-joint
# sigma constants of the COCO keypoint evaluation.
COCO_JOINT_SPREADS = np.array([
    0.052, 0.050, 0.050, 0.070, 0.070, 0.158, 0.158, 0.144, 0.144,
    0.124, 0.124, 0.214, 0.214, 0.174, 0.174, 0.178, 0.178,
])

METRIC_KINDS = ("AP", "AP50", "AP75", "APmedium", "APlarge", "AR")

_AREA_RANGES = {
    "all": (0.0, float("inf")),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, float("inf")),
}


@dataclasses.dataclass
class OksParams:
    k: np.ndarray                      # per-joint tolerance, shape (K,)
    thresholds: np.ndarray = dataclasses.field(
        default_factory=lambda: np.linspace(0.5, 0.95, 10))

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64).reshape(-1)
        if np.any(self.k <= 0):
            raise ValueError("joint tolerances must be positive")

    @classmethod
    def coco17(cls) -> "OksParams":
        return cls(k=COCO_JOINT_SPREADS.copy())

    @classmethod
    def uniform(cls, k: float, num_joints: int) -> "OksParams":
        return cls(k=np.full(num_joints, float(k)))


@dataclasses.dataclass
class Prediction:
    """One detected pose: joint coordinates plus an instance score."""

    image_id: int
    xy: np.ndarray             # (K, 2) in original-image pixels
    joint_scores: np.ndarray   # (K,)
    score: float


def oks(pred_xy: np.ndarray, gt_xy: np.ndarray, gt_vis: np.ndarray,
        area: float, params: OksParams) -> float:
    """Similarity in [0, 1]; 0 when the annotation has no labeled joints."""
    if area <= 0:
        raise ValueError(f"instance area must be positive, got {area}")
    pred_xy = np.asarray(pred_xy, dtype=np.float64)
    gt_xy = np.asarray(gt_xy, dtype=np.float64)
    labeled = np.asarray(gt_vis) > 0
    if pred_xy.shape != gt_xy.shape or len(params.k) != len(gt_xy):
        raise ValueError(f"joint count mismatch: pred {pred_xy.shape}, "
                         f"gt {gt_xy.shape}, k {params.k.shape}")
    if not labeled.any():
        return 0.0
    d2 = ((pred_xy - gt_xy) ** 2).sum(axis=1)
    e = d2 / (2.0 * area * params.k ** 2)
    return float(np.exp(-e[labeled]).mean())


@dataclasses.dataclass
class ImageRecord:
    """Per-image evaluation state: OKS of every (det, gt) pair plus the
    bookkeeping needed to re-run matching at any threshold/area bucket."""

    image_id: int
    oks_matrix: np.ndarray   # (D, G)
    det_scores: np.ndarray   # (D,) already in matching order
    gt_areas: np.ndarray     # (G,)
    gt_empty: np.ndarray     # (G,) bool: no labeled joints -> always ignored


def collect_records(predictions: Sequence[Prediction], ground_truths,
                    params: OksParams, max_dets: int = 20) -> list[ImageRecord]:
    """Group by image, order detections, compute all OKS values once.

    ``ground_truths`` is any sequence of objects with ``image_id``, ``xy``,
    ``visibility`` and ``area`` attributes.  Detections are sorted per image
    by descending score (stable), keeping at most ``max_dets``.
    """
    by_image: dict[int, tuple[list, list]] = {}
    for gt in ground_truths:
        by_image.setdefault(int(gt.image_id), ([], []))[1].append(gt)
    for det in predictions:
        by_image.setdefault(int(det.image_id), ([], []))[0].append(det)

    records = []
    for image_id in sorted(by_image):
        dets, gts = by_image[image_id]
        order = sorted(range(len(dets)),
                       key=lambda i: (-float(dets[i].score), i))[:max_dets]
        dets = [dets[i] for i in order]
        mat = np.zeros((len(dets), len(gts)))
        for di, det in enumerate(dets):
            for gi, gt in enumerate(gts):
                mat[di, gi] = oks(det.xy, gt.xy, gt.visibility, gt.area, params)
        records.append(ImageRecord(
            image_id=image_id,
            oks_matrix=mat,
            det_scores=np.array([float(d.score) for d in dets]),
            gt_areas=np.array([float(g.area) for g in gts]),
            gt_empty=np.array([not np.any(np.asarray(g.visibility) > 0)
                               for g in gts], dtype=bool),
        ))
    return records


def _match_image(rec: ImageRecord, threshold: float,
                 area_range: tuple[float, float]):
    """Greedy matching for one image; returns (tp, ignore) flags per det and
    the number of matchable (non-ignored) ground truths."""
    lo, hi = area_range
    ignored = rec.gt_empty | (rec.gt_areas < lo) | (rec.gt_areas >= hi)
    # consider real ground truths before ignored ones
    gt_order = sorted(range(len(ignored)), key=lambda g: (ignored[g], g))
    matched = np.zeros(len(ignored), dtype=bool)
    tp = np.zeros(len(rec.det_scores), dtype=bool)
    det_ignored = np.zeros(len(rec.det_scores), dtype=bool)
    for d in range(len(rec.det_scores)):
        best, best_oks = -1, threshold
        for g in gt_order:
            if matched[g]:
                continue
            if best > -1 and not ignored[best] and ignored[g]:
                break  # a real match is already in hand; ignored can't beat it
            if rec.oks_matrix[d, g] < best_oks:
                continue
            best, best_oks = g, rec.oks_matrix[d, g]
        if best > -1:
            matched[best] = True
            if ignored[best]:
                det_ignored[d] = True
            else:
                tp[d] = True
    return tp, det_ignored, int((~ignored).sum())


def _curve(records: Sequence[ImageRecord], threshold: float,
           area_range: tuple[float, float]):
    """Global score-ordered TP flags and the ground-truth count."""
    rows = []
    num_gt = 0
    for rec in records:
        tp, det_ignored, npig = _match_image(rec, threshold, area_range)
        num_gt += npig
        for d, score in enumerate(rec.det_scores):
            if not det_ignored[d]:
                rows.append((-score, rec.image_id, d, tp[d]))
    rows.sort()
    return np.array([r[3] for r in rows], dtype=bool), num_gt


def _average_precision(tp: np.ndarray, num_gt: int,
                       recall_points: int = 101) -> float:
    if num_gt == 0:
        return 0.0
    if len(tp) == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / num_gt
    precision = tp_cum / (tp_cum + fp_cum)
    # monotone envelope from the right
    for i in range(len(precision) - 1, 0, -1):
        precision[i - 1] = max(precision[i - 1], precision[i])
    thresholds = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, thresholds, side="left")
    return float(np.mean([precision[i] if i < len(precision) else 0.0
                          for i in idx]))


def summarize(records: Sequence[ImageRecord], kind: str,
              params: Optional[OksParams] = None) -> float:
    """One scalar metric over precomputed records.

    Kinds: AP (mean over thresholds), AP50/AP75 (single threshold),
    APmedium/APlarge (area-restricted AP), AR (mean recall over thresholds).
    Buckets with no ground truths score 0.
    """
    thresholds = (params.thresholds if params is not None
                  else np.linspace(0.5, 0.95, 10))
    if kind == "AP50":
        tp, n = _curve(records, 0.5, _AREA_RANGES["all"])
        return _average_precision(tp, n)
    if kind == "AP75":
        tp, n = _curve(records, 0.75, _AREA_RANGES["all"])
        return _average_precision(tp, n)
    if kind in ("AP", "APmedium", "APlarge"):
        bucket = {"AP": "all", "APmedium": "medium", "APlarge": "large"}[kind]
        vals = []
        for t in thresholds:
            tp, n = _curve(records, float(t), _AREA_RANGES[bucket])
            vals.append(_average_precision(tp, n))
        return float(np.mean(vals))
    if kind == "AR":
        vals = []
        for t in thresholds:
            tp, n = _curve(records, float(t), _AREA_RANGES["all"])
            vals.append(0.0 if n == 0 else float(tp.sum()) / n)
        return float(np.mean(vals))
    raise ValueError(f"unknown metric kind {kind!r}; have {METRIC_KINDS}")


def metric_table(records: Sequence[ImageRecord],
                 params: Optional[OksParams] = None) -> dict[str, float]:
    """All standard metrics, in reporting order."""
    return {kind: summarize(records, kind, params) for kind in METRIC_KINDS}
