"""Two-stage recognition: orientation classification on tiles, redirect,
then detection on the resized whole image."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import graph as G
from .detect import Anchor, decode_head, nms
from .imageio import read_image, resize_bilinear, rotate_ccw, tile_image, to_rgb


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def load_defaults():
    return json.loads(resources.files(__package__).joinpath("data/defaults.json").read_text())


def load_class_names():
    return json.loads(resources.files(__package__).joinpath("data/class_names.json").read_text())


def load_config(path=None, **overrides):
    cfg = load_defaults()
    if path:
        with open(path) as f:
            extra = json.load(f)
        unknown = set(extra) - set(cfg)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(extra)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _normalize(img_u8):
    return np.asarray(to_rgb(img_u8), dtype=np.float32) / 255.0


def classify_orientation(image, graph: G.NetGraph, weights, cfg=None):
    """Class and confidence of the most confident tile.

    Tiles are ``cfg["tile"]`` squares resized to ``cfg["classifier_input"]``.
    Returns ``(class, confidence, per-tile probabilities)``.
    """
    cfg = cfg or load_defaults()
    size = cfg["classifier_input"]
    G.check_weights(graph, weights, (size, size, 3))
    batch = []
    for patch, _ in tile_image(np.asarray(image), cfg["tile"]):
        x = _normalize(patch)
        batch.append(resize_bilinear(x, size, size) if x.shape[0] != size else x)
    probs = G.forward(graph, weights, np.stack(batch))[graph.outputs[0]].reshape(len(batch), -1)
    best = int(np.argmax(probs.max(axis=1)))
    cls = int(np.argmax(probs[best]))
    return cls, float(probs[best, cls]), probs


def redirect(image, cls):
    """Undo a ``cls`` quarter-turn clockwise rotation."""
    if cls not in (0, 1, 2, 3):
        raise ValueError(f"orientation class must be 0..3, got {cls}")
    return np.asarray(image).copy() if cls == 0 else rotate_ccw(image, cls)


def head_anchors(cfg, coarse):
    # the coarse grid predicts the large objects
    return tuple(Anchor(*a) for a in cfg["anchors_13" if coarse else "anchors_26"])


def recognize(image, graph: G.NetGraph, weights, cfg=None, image_name=""):
    """Detections in original image coordinates, after NMS.

    Also returns the number of raw candidates per head (before thresholding).
    """
    cfg = cfg or load_defaults()
    size = cfg["detector_input"]
    G.check_weights(graph, weights, (size, size, 3))
    img = np.asarray(image)
    h, w = img.shape[:2]
    x = resize_bilinear(_normalize(img), size, size)
    outs = G.forward(graph, weights, x[None])
    dets, candidates = [], {}
    coarsest = min(outs[o].shape[1] for o in graph.outputs)
    for out_id in graph.outputs:
        raw = outs[out_id][0]
        grid = raw.shape[0]
        anchors = head_anchors(cfg, grid == coarsest)
        candidates[out_id] = grid * grid * len(anchors)
        dets.extend(decode_head(raw, anchors, size, cfg["conf_threshold"], image_name))
    kept = nms(dets, cfg["nms_iou"])
    sx, sy = w / size, h / size
    mapped = [type(d)((d.box[0] * sx, d.box[1] * sy, d.box[2] * sx, d.box[3] * sy),
                      d.class_id, d.score, d.image) for d in kept]
    return mapped, candidates


@dataclass
class PipelineResult:
    image: str
    orientation_class: int
    orientation_confidence: float
    rotation: int
    detections: list
    timings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    image_size: tuple = (0, 0)

    def to_dict(self, class_names=None, timings=True):
        d = {
            "image": self.image,
            "image_size": list(self.image_size),
            "orientation": {"class": self.orientation_class,
                            "confidence": self.orientation_confidence},
            "rotation": self.rotation,
            "rotation_direction": "ccw",
            "detections": [det.to_json(class_names) for det in self.detections],
            "config": self.config,
        }
        if timings:
            d["timings"] = self.timings
        return d


RESULT_SCHEMA = {
    "type": "object",
    "required": ["image", "image_size", "orientation", "rotation", "detections", "config"],
    "properties": {
        "image": {"type": "string"},
        "image_size": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        "orientation": {
            "type": "object", "required": ["class", "confidence"],
            "properties": {"class": {"enum": [0, 1, 2, 3]},
                           "confidence": {"type": "number", "minimum": 0, "maximum": 1}},
        },
        "rotation": {"enum": [0, 90, 180, 270]},
        "rotation_direction": {"const": "ccw"},
        "detections": {
            "type": "array",
            "items": {
                "type": "object", "required": ["class_id", "score", "box"],
                "properties": {
                    "image": {"type": "string"},
                    "class_id": {"type": "integer", "minimum": 0},
                    "class_name": {"type": "string"},
                    "score": {"type": "number", "minimum": 0, "maximum": 1},
                    "box": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                },
            },
        },
        "timings": {"type": "object", "additionalProperties": {"type": "number"}},
        "config": {"type": "object"},
    },
}


def run_pipeline(image, cls_model, det_model, cfg=None, image_name=""):
    """classify -> redirect -> recognize. ``image`` is a path or a uint8 array;
    models are ``(graph, weights)`` pairs. Stage failures raise ``StageError``."""
    cfg = cfg or load_defaults()
    timings = {}
    t = time.perf_counter()
    try:
        img = read_image(image) if isinstance(image, (str, bytes)) or hasattr(image, "__fspath__") else image
    except (OSError, ValueError) as e:
        raise StageError("load", e) from e
    if not image_name and not isinstance(image, np.ndarray):
        image_name = str(image)
    timings["load"] = time.perf_counter() - t

    t = time.perf_counter()
    try:
        cls, conf, _ = classify_orientation(img, *cls_model, cfg)
    except (G.GraphError, G.WeightError, ValueError) as e:
        raise StageError("classify", e) from e
    timings["classify"] = time.perf_counter() - t

    t = time.perf_counter()
    upright = redirect(img, cls)
    timings["redirect"] = time.perf_counter() - t

    t = time.perf_counter()
    try:
        dets, _ = recognize(upright, *det_model, cfg, image_name)
    except (G.GraphError, G.WeightError, ValueError) as e:
        raise StageError("recognize", e) from e
    timings["recognize"] = time.perf_counter() - t
    return PipelineResult(image_name, cls, conf, 90 * cls, dets, timings, dict(cfg),
                          tuple(int(v) for v in upright.shape[:2]))
