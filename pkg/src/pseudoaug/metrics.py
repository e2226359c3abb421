"""Point-level precision/recall and a BEV-IoU greedy-matching average
precision used for teacher gating and surrogate evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom


@dataclass(frozen=True)
class PRResult:
    true_positives: int
    false_positives: int
    false_negatives: int

    @property
    def precision(self):
        denom = self.true_positives + self.false_positives
        return 1.0 if denom == 0 else self.true_positives / denom

    @property
    def recall(self):
        denom = self.true_positives + self.false_negatives
        return 1.0 if denom == 0 else self.true_positives / denom

    def merged(self, other):
        return PRResult(
            self.true_positives + other.true_positives,
            self.false_positives + other.false_positives,
            self.false_negatives + other.false_negatives,
        )


def _inside_any(points, geometries):
    mask = np.zeros(np.asarray(points).shape[0], dtype=bool)
    for g in geometries:
        mask |= geom.points_in_box(points, g)
    return mask


def point_precision_recall(points, gt_boxes, pseudo_boxes):
    """Per-point counts: predicted-positive iff inside any pseudo box,
    actual-positive iff inside any ground-truth box.

    Boxes are Box7 geometries.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        return PRResult(0, 0, 0)
    predicted = _inside_any(points, pseudo_boxes)
    actual = _inside_any(points, gt_boxes)
    tp = int(np.count_nonzero(predicted & actual))
    fp = int(np.count_nonzero(predicted & ~actual))
    fn = int(np.count_nonzero(~predicted & actual))
    return PRResult(tp, fp, fn)


def _ap_single_class(detections, gts, iou_threshold):
    """AP for one class: greedy matching in descending score, area under
    the precision envelope over recall."""
    n_gt = len(gts)
    if n_gt == 0:
        return None
    if not detections:
        return 0.0
    order = sorted(range(len(detections)), key=lambda i: -detections[i][1])
    matched = [False] * n_gt
    tp_flags = []
    for i in order:
        box = detections[i][0]
        best_j, best_iou = -1, -1.0
        for j, gt_box in enumerate(gts):
            if matched[j]:
                continue
            iou = geom.bev_iou(box, gt_box)
            # ties keep the first (lowest-index) ground truth
            if iou >= iou_threshold and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0:
            matched[best_j] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    tp_cum = np.cumsum(tp_flags)
    fp_cum = np.cumsum([not f for f in tp_flags])
    recalls = tp_cum / n_gt
    precisions = tp_cum / (tp_cum + fp_cum)
    # Precision envelope: running maximum from the right.
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    ap = 0.0
    prev_recall = 0.0
    for r, p in zip(recalls, envelope):
        ap += (r - prev_recall) * p
        prev_recall = r
    return float(ap)


def detection_ap_per_class(detections, gts, iou_threshold):
    """Per-class AP dict. detections: (Box7, score, class_id) triples;
    gts: (Box7, class_id) pairs. Classes with no ground truth are skipped."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    classes = sorted({c for _, c in gts})
    out = {}
    for cls in classes:
        dets_c = [(b, s) for b, s, c in detections if c == cls]
        gts_c = [b for b, c in gts if c == cls]
        out[cls] = _ap_single_class(dets_c, gts_c, iou_threshold)
    return out


def detection_ap(detections, gts, iou_threshold):
    """Mean over per-class APs; 0.0 when there is no ground truth at all
    but detections exist, 1.0 on the empty-vs-empty case."""
    per_class = detection_ap_per_class(detections, gts, iou_threshold)
    if not per_class:
        return 0.0 if detections else 1.0
    return float(np.mean(list(per_class.values())))
