"""YOLO-style head decoding, IoU and per-class greedy NMS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import sigmoid


@dataclass(frozen=True)
class Anchor:
    width: float
    height: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"anchor dims must be positive, got {self.width}x{self.height}")


# Tiny-YOLOv3 defaults; the 13x13 head sees the large ones
ANCHORS_13 = (Anchor(81, 82), Anchor(135, 169), Anchor(344, 319))
ANCHORS_26 = (Anchor(10, 14), Anchor(23, 27), Anchor(37, 58))
CONF_THRESHOLD = 0.25
NMS_IOU = 0.45


@dataclass(frozen=True)
class Detection:
    box: tuple  # (x_min, y_min, x_max, y_max) in input pixels
    class_id: int
    score: float
    image: str = ""

    def to_json(self, class_names=None):
        d = {"image": self.image, "class_id": int(self.class_id), "score": float(self.score),
             "box": [float(v) for v in self.box]}
        if class_names is not None:
            d["class_name"] = class_names[self.class_id]
        return d


def iou(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def decode_head(raw, anchors, input_size, conf_threshold=CONF_THRESHOLD, image=""):
    """Turn an ``S x S x A(5+K)`` head map into thresholded detections."""
    raw = np.asarray(raw, dtype=np.float64)
    s_h, s_w, ch = raw.shape
    n_anchor = len(anchors)
    if ch % n_anchor or ch // n_anchor < 6:
        raise ValueError(f"head has {ch} channels, not a multiple of {n_anchor} x (5 + classes)")
    if s_h != s_w or input_size % s_h:
        raise ValueError(f"grid {s_h}x{s_w} does not tile input size {input_size}")
    stride = input_size / s_h
    p = raw.reshape(s_h, s_w, n_anchor, ch // n_anchor)
    cols = np.arange(s_w)[None, :, None]
    rows = np.arange(s_h)[:, None, None]
    cx = (cols + sigmoid(p[..., 0])) * stride
    cy = (rows + sigmoid(p[..., 1])) * stride
    aw = np.array([a.width for a in anchors])
    ah = np.array([a.height for a in anchors])
    bw = aw * np.exp(np.minimum(p[..., 2], 30.0))
    bh = ah * np.exp(np.minimum(p[..., 3], 30.0))
    cls_prob = sigmoid(p[..., 5:])
    cls_id = cls_prob.argmax(axis=-1)
    score = sigmoid(p[..., 4]) * cls_prob.max(axis=-1)
    x0 = np.clip(cx - bw / 2, 0, input_size)
    y0 = np.clip(cy - bh / 2, 0, input_size)
    x1 = np.clip(cx + bw / 2, 0, input_size)
    y1 = np.clip(cy + bh / 2, 0, input_size)
    keep = (score >= conf_threshold) & (x1 > x0) & (y1 > y0)
    out = []
    for r, c, a in zip(*np.nonzero(keep)):
        out.append(Detection((float(x0[r, c, a]), float(y0[r, c, a]), float(x1[r, c, a]),
                              float(y1[r, c, a])), int(cls_id[r, c, a]), float(score[r, c, a]), image))
    return out


def nms(dets, iou_threshold=NMS_IOU):
    """Greedy per-class suppression; result sorted by score, highest first."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept = []
    for i in order:
        d = dets[i]
        if all(k.class_id != d.class_id or k.image != d.image or iou(k.box, d.box) <= iou_threshold
               for k in kept):
            kept.append(d)
    return kept
