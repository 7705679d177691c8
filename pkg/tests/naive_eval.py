"""Deliberately slow, loop-everything AP/AR reference used to cross-check
frpose.evaluation.  Shares only the protocol conventions (greedy matching in
score order with ties broken by image id then detection index, 101 recall
points, area buckets, instances without labeled joints ignored), not the
implementation: precision at each recall point is found by direct search
over the curve instead of the monotone-envelope trick.
"""

import math

AREA_RANGES = {
    "all": (0.0, math.inf),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, math.inf),
}


def naive_oks(pred_xy, gt_xy, gt_vis, area, k):
    total, count = 0.0, 0
    for j in range(len(gt_xy)):
        if gt_vis[j] <= 0:
            continue
        dx = pred_xy[j][0] - gt_xy[j][0]
        dy = pred_xy[j][1] - gt_xy[j][1]
        total += math.exp(-(dx * dx + dy * dy) / (2.0 * area * k[j] * k[j]))
        count += 1
    return total / count if count else 0.0


def _prepare(predictions, ground_truths, k, max_dets):
    """Group by image and precompute OKS; detections sorted by score."""
    images = {}
    for gt in ground_truths:
        images.setdefault(gt.image_id, {"dets": [], "gts": []})["gts"].append(gt)
    for det in predictions:
        images.setdefault(det.image_id, {"dets": [], "gts": []})["dets"].append(det)
    prepared = []
    for image_id in sorted(images):
        dets = images[image_id]["dets"]
        dets = [dets[i] for i in
                sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))]
        dets = dets[:max_dets]
        gts = images[image_id]["gts"]
        table = [[naive_oks(d.xy, g.xy, g.visibility, g.area, k) for g in gts]
                 for d in dets]
        prepared.append({
            "image_id": image_id,
            "scores": [d.score for d in dets],
            "oks": table,
            "areas": [g.area for g in gts],
            "empty": [all(v <= 0 for v in g.visibility) for g in gts],
        })
    return prepared


def _match_one(entry, threshold, lo, hi):
    ignored = [e or not (lo <= a < hi)
               for e, a in zip(entry["empty"], entry["areas"])]
    order = [g for g in range(len(ignored)) if not ignored[g]] + \
            [g for g in range(len(ignored)) if ignored[g]]
    taken = [False] * len(ignored)
    flags = []  # per det: "tp" | "fp" | "ign"
    for d in range(len(entry["scores"])):
        best = -1
        best_oks = threshold
        for g in order:
            if taken[g]:
                continue
            if best >= 0 and not ignored[best] and ignored[g]:
                break
            if entry["oks"][d][g] < best_oks:
                continue
            best = g
            best_oks = entry["oks"][d][g]
        if best < 0:
            flags.append("fp")
        else:
            taken[best] = True
            flags.append("ign" if ignored[best] else "tp")
    return flags, sum(1 for x in ignored if not x)


def _global_flags(prepared, threshold, bucket):
    lo, hi = AREA_RANGES[bucket]
    rows = []
    num_gt = 0
    for entry in prepared:
        flags, npig = _match_one(entry, threshold, lo, hi)
        num_gt += npig
        for d, flag in enumerate(flags):
            if flag != "ign":
                rows.append((-entry["scores"][d], entry["image_id"], d, flag))
    rows.sort()
    return [r[3] for r in rows], num_gt


def _ap_from_flags(flags, num_gt):
    if num_gt == 0:
        return 0.0
    points = []  # (recall, precision) after each detection
    tp = fp = 0
    for flag in flags:
        if flag == "tp":
            tp += 1
        else:
            fp += 1
        points.append((tp / num_gt, tp / (tp + fp)))
    total = 0.0
    for i in range(101):
        r = i / 100.0
        best = 0.0
        for recall, precision in points:
            if recall >= r and precision > best:
                best = precision
        total += best
    return total / 101.0


def naive_metrics(predictions, ground_truths, k, max_dets=20):
    """Returns {"AP", "AP50", "AP75", "APmedium", "APlarge", "AR"}."""
    prepared = _prepare(predictions, ground_truths, k, max_dets)
    thresholds = [0.5 + 0.05 * i for i in range(10)]

    def ap(bucket, ts):
        vals = []
        for t in ts:
            flags, num_gt = _global_flags(prepared, t, bucket)
            vals.append(_ap_from_flags(flags, num_gt))
        return sum(vals) / len(vals)

    recalls = []
    for t in thresholds:
        flags, num_gt = _global_flags(prepared, t, "all")
        recalls.append(0.0 if num_gt == 0
                       else sum(1 for f in flags if f == "tp") / num_gt)
    return {
        "AP": ap("all", thresholds),
        "AP50": ap("all", [0.5]),
        "AP75": ap("all", [0.75]),
        "APmedium": ap("medium", thresholds),
        "APlarge": ap("large", thresholds),
        "AR": sum(recalls) / len(recalls),
    }
