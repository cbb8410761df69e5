"""Detection matching, precision/recall, all-point AP, mAP and accuracy."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .detect import Detection, iou

IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class GroundTruthBox:
    image: str
    box: tuple
    class_id: int


@dataclass
class PrCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float
    num_gt: int = 0


def sort_detections(dets):
    return sorted(dets, key=lambda d: -d.score)


def match_detections(dets, gts, iou_threshold=IOU_THRESHOLD):
    """Greedy matching in descending-score order.

    A detection is a TP when, among the still-unmatched ground truths of its
    image and class, the one with the highest IoU reaches the threshold.
    Returns ``(labels, fn)`` with ``labels[i]`` True for TP of ``dets[i]``
    taken in score order (the input is sorted here, stably).
    """
    dets = sort_detections(dets)
    pool = defaultdict(list)
    for gt in gts:
        pool[(gt.image, gt.class_id)].append(gt)
    matched = set()
    labels = []
    for d in dets:
        best, best_iou = None, -1.0
        for k, gt in enumerate(pool.get((d.image, d.class_id), ())):
            if (d.image, d.class_id, k) in matched:
                continue
            v = iou(d.box, gt.box)
            if v > best_iou:
                best, best_iou = k, v
        if best is not None and best_iou >= iou_threshold:
            matched.add((d.image, d.class_id, best))
            labels.append(True)
        else:
            labels.append(False)
    return labels, len(gts) - len(matched)


def precision_recall(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def average_precision(labels, num_gt):
    """All-point interpolated AP for TP/FP labels ranked by descending score."""
    labels = np.asarray(labels, dtype=bool)
    if num_gt == 0 or labels.size == 0:
        return PrCurve(np.zeros(0), np.zeros(0), 0.0, num_gt)
    tp = np.cumsum(labels)
    fp = np.cumsum(~labels)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return PrCurve(recall, precision, float(np.sum(steps * envelope)), num_gt)


def mean_ap(curves):
    """Unweighted mean AP over classes that have at least one ground truth."""
    aps = [c.ap for c in curves.values() if c.num_gt > 0]
    if not aps:
        raise ValueError("no class has ground-truth instances")
    return float(np.mean(aps))


def evaluate(dets, gts, iou_threshold=IOU_THRESHOLD):
    """Per-class AP, mAP and pooled precision/recall over a detection set."""
    classes = sorted({g.class_id for g in gts} | {d.class_id for d in dets})
    curves = {}
    tp_total = fp_total = fn_total = 0
    for c in classes:
        cd = [d for d in dets if d.class_id == c]
        cg = [g for g in gts if g.class_id == c]
        labels, fn = match_detections(cd, cg, iou_threshold)
        curves[c] = average_precision(labels, len(cg))
        tp = sum(labels)
        tp_total += tp
        fp_total += len(labels) - tp
        fn_total += fn
    precision, recall = precision_recall(tp_total, fp_total, fn_total)
    report = {
        "per_class_ap": {str(c): curves[c].ap for c in classes if curves[c].num_gt > 0},
        "map": mean_ap(curves) if gts else 0.0,
        "precision": precision,
        "recall": recall,
        "tp": tp_total, "fp": fp_total, "fn": fn_total,
        "iou_threshold": iou_threshold,
        "score_threshold": min((d.score for d in dets), default=None),
        "interpolation": "all-point",
    }
    return report, curves


def classification_accuracy(preds, labels):
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    if not len(labels):
        raise ValueError("no labels")
    return float(np.mean(np.asarray(preds) == np.asarray(labels)))


def read_detections(lines):
    out = []
    for line in lines:
        if line.strip():
            d = json.loads(line)
            out.append(Detection(tuple(d["box"]), int(d["class_id"]), float(d.get("score", 1.0)),
                                 str(d.get("image", ""))))
    return out


def read_ground_truth(lines):
    out = []
    for line in lines:
        if line.strip():
            d = json.loads(line)
            out.append(GroundTruthBox(str(d.get("image", "")), tuple(d["box"]), int(d["class_id"])))
    return out
