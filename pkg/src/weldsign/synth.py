"""Deterministic synthetic data: orientation cross marks and glyph scenes.

All randomness comes from :class:`SplitMix64`, a counter-based generator
built on the SplitMix64 xorshift-multiply mixer, so datasets are
bit-identical across platforms and numpy versions. Sample ``i`` of a
dataset draws from its own sub-stream ``SplitMix64(seed).fork(i)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .detect import Detection
from .imageio import decode_pnm, quantize, rotate_cw, write_image
from .metrics import GroundTruthBox

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _mix_int(z):
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """Stream ``k`` of key ``s`` is ``mix(s + (k + 1) * golden)`` (mod 2**64)."""

    def __init__(self, seed):
        self.key = _mix_int(int(seed) & _MASK)
        self.counter = 0

    def fork(self, index):
        child = SplitMix64(0)
        child.key = _mix_int(self.key ^ _mix_int(int(index) + 0x632BE59BD9B4E019))
        return child

    def u64(self, n):
        ctr = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.key) + ctr * _GOLDEN)

    def uniform(self, n=None, low=0.0, high=1.0):
        """Floats in ``[low, high)`` from the top 53 bits."""
        u = (self.u64(1 if n is None else n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        u = low + (high - low) * u
        return float(u[0]) if n is None else u

    def randint(self, low, high):
        """Integer in ``[low, high)``."""
        return low + int(self.uniform() * (high - low))

    def normal(self, n):
        u1 = self.uniform(n)
        u2 = self.uniform(n)
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def poisson(self, lam):
        # Knuth; fine for the small rates used here
        limit, k, p = math.exp(-lam), 0, 1.0
        while True:
            p *= self.uniform()
            if p <= limit:
                return k
            k += 1


# ------------------------------------------------------------ orientation

ORIENT_SIZE = 224
NUM_ORIENTATIONS = 4
# arm lengths relative to the glyph scale; all distinct so no rotation or
# reflection maps the mark onto itself
ARM = {"right": 1.0, "up": 0.8, "left": 0.55, "down": 0.4}


@dataclass
class OrientationSample:
    image: np.ndarray  # uint8 H x W (grayscale; replicated to 3 channels on use)
    label: int

    def tensor(self):
        return to_input(self.image)


def to_input(gray_u8):
    """uint8 gray (H, W) or batch (N, H, W) -> float32 ``... x 3`` in [0, 1]."""
    x = np.asarray(gray_u8, dtype=np.float32) / 255.0
    return np.repeat(x[..., None], 3, axis=-1)


def _canvas_grid(size, pixels=None):
    """Pixel-centre coordinates of a ``pixels``-wide raster over a ``size`` canvas."""
    pixels = pixels or size
    yy, xx = np.mgrid[0:pixels, 0:pixels]
    step = size / pixels
    return (yy.astype(np.float64) + 0.5) * step, (xx.astype(np.float64) + 0.5) * step


def render_cross(rng: SplitMix64, size=ORIENT_SIZE, pixels=None):
    """Canonical-pose ("right & up") mark on a noisy background, float in [0, 1].

    Geometry is drawn on a ``size`` canvas and rasterized at ``pixels``
    (default ``size``); noise is drawn per output pixel.
    """
    pixels = pixels or size
    scale = rng.uniform(low=38.0, high=70.0)
    thick = scale * rng.uniform(low=0.14, high=0.2)
    head = scale * 0.32
    ext_r = scale * ARM["right"] + head
    ext_u = scale * ARM["up"] + thick
    ext_l = scale * ARM["left"]
    ext_d = scale * ARM["down"]
    margin = 4.0
    cx = rng.uniform(low=margin + ext_l, high=size - margin - ext_r)
    cy = rng.uniform(low=margin + ext_u, high=size - margin - ext_d)
    background = rng.uniform(low=0.2, high=0.5)
    # lead markers always image brighter than the film background
    contrast = rng.uniform(low=0.4, high=0.6)
    sigma = rng.uniform(low=0.01, high=0.03)

    y, x = _canvas_grid(size, pixels)
    half = thick / 2
    horiz = (np.abs(y - cy) <= half) & (x >= cx - ext_l) & (x <= cx + scale * ARM["right"])
    vert = (np.abs(x - cx) <= half) & (y >= cy - scale * ARM["up"]) & (y <= cy + ext_d)
    # arrowhead on the right arm tip
    tip = cx + scale * ARM["right"]
    dx = x - tip
    arrow = (dx >= 0) & (dx <= head) & (np.abs(y - cy) <= (head - dx) * 0.8)
    # serif bar across the top of the up arm
    top = cy - scale * ARM["up"]
    serif = (y >= top - thick) & (y <= top) & (np.abs(x - cx) <= scale * 0.3) & (x >= cx - half)
    mask = horiz | vert | arrow | serif
    img = background + rng.normal(pixels * pixels).reshape(pixels, pixels) * sigma
    img = img + contrast * mask
    return np.clip(img, 0.0, 1.0)


def orientation_sample(seed, index, size=ORIENT_SIZE, label=None):
    """Sample ``index``; its label-0 twin is ``orientation_sample(seed, index, label=0)``."""
    rng = SplitMix64(seed).fork(index)
    canonical = quantize(render_cross(rng, size))
    label = index % NUM_ORIENTATIONS if label is None else label
    return OrientationSample(rotate_cw(canonical, label), label)


def gen_orientation_dataset(n, seed, size=ORIENT_SIZE, start=0):
    if n < 1:
        raise ValueError("n must be >= 1")
    return [orientation_sample(seed, start + i, size) for i in range(n)]


def pipeline_image(seed, index, label, tile=None):
    """One ``tile x tile`` mark image rotated by ``label`` quarter turns clockwise.

    The mark keeps its classifier-scale geometry and is rasterized at tile
    resolution, so the pipeline's tile resize lands on the training
    distribution (upsampling a 224 px render would smooth the noise).
    """
    tile = tile or SCENE_SIZE
    rng = SplitMix64(seed).fork(index)
    return rotate_cw(quantize(render_cross(rng, ORIENT_SIZE, pixels=tile)), label)


def stack_orientation(samples):
    return np.stack([s.image for s in samples]), np.array([s.label for s in samples], dtype=np.int64)


# ------------------------------------------------------------ scenes

SCENE_SIZE = 416
NUM_GLYPH_CLASSES = 40
MAX_REL_SIZE = 0.25


def glyph_bitmap(class_id):
    """Fixed 7x5 bitmap for a class; bit patterns come from a hash of the id."""
    bits = _mix_int(0xC0FFEE ^ (class_id * 0x9E3779B97F4A7C15))
    m = np.array([(bits >> k) & 1 for k in range(35)], dtype=bool).reshape(7, 5)
    # solid frame corners pin the render extent to the full 7x5 cell
    m[0, 0] = m[0, 4] = m[6, 0] = m[6, 4] = True
    m[3, 2] = bool(class_id & 1)
    return m


@dataclass
class SceneSample:
    image: np.ndarray  # uint8 H x W
    boxes: list        # GroundTruthBox
    name: str = ""


def _overlaps(box, boxes, gap=1):
    for b in boxes:
        if not (box[2] + gap <= b[0] or b[2] + gap <= box[0] or
                box[3] + gap <= b[1] or b[3] + gap <= box[1]):
            return True
    return False


def scene_sample(seed, index, size=SCENE_SIZE):
    rng = SplitMix64(seed).fork(index)
    name = f"scene_{index:06d}"
    background = rng.uniform(low=0.15, high=0.45)
    img = background + rng.normal(size * size).reshape(size, size) * rng.uniform(low=0.02, high=0.06)
    n_boxes = rng.randint(3, 13)
    placed = []
    attempts = 0
    while len(placed) < n_boxes and attempts < 500:
        attempts += 1
        cls = rng.randint(0, NUM_GLYPH_CLASSES)
        cell = rng.randint(3, 9)
        gh, gw = 7 * cell, 5 * cell
        x0 = rng.randint(0, size - gw + 1)
        y0 = rng.randint(0, size - gh + 1)
        box = (x0, y0, x0 + gw, y0 + gh)
        if _overlaps(box, [b for b, _ in placed]):
            continue
        placed.append((box, cls))
        glyph = np.kron(glyph_bitmap(cls), np.ones((cell, cell), dtype=bool))
        img[y0:y0 + gh, x0:x0 + gw] += rng.uniform(low=0.3, high=0.5) * glyph
    boxes = [GroundTruthBox(name, tuple(float(v) for v in b), c) for b, c in placed]
    return SceneSample(quantize(img), boxes, name)


def gen_scene_dataset(n, seed, size=SCENE_SIZE):
    if n < 1:
        raise ValueError("n must be >= 1")
    return [scene_sample(seed, i, size) for i in range(n)]


def jittered_oracle_detector(scene: SceneSample, drop_rate, jitter, seed, false_rate=0.0,
                             size=SCENE_SIZE, keep_log=None):
    """Noisy copy of the ground truth with controllable misses and false boxes.

    Each GT survives with probability ``1 - drop_rate`` and has every edge
    moved by at most ``jitter`` pixels; a Poisson(``false_rate``) number of
    random boxes is added. Keep decisions are appended to ``keep_log``.
    """
    if not (0 <= drop_rate <= 1 and jitter >= 0 and false_rate >= 0):
        raise ValueError("rates must be within range")
    rng = SplitMix64(seed).fork(hash_name(scene.name))
    dets = []
    for gt in scene.boxes:
        keep = rng.uniform() >= drop_rate
        if keep_log is not None:
            keep_log.append(keep)
        offsets = rng.uniform(4, -jitter, jitter) if jitter > 0 else np.zeros(4)
        score = 1.0 - rng.uniform()
        if not keep:
            continue
        x0, y0, x1, y1 = (v + o for v, o in zip(gt.box, offsets))
        x0, x1 = sorted((min(max(x0, 0), size), min(max(x1, 0), size)))
        y0, y1 = sorted((min(max(y0, 0), size), min(max(y1, 0), size)))
        if x1 - x0 < 1 or y1 - y0 < 1:
            x0, y0, x1, y1 = gt.box
        dets.append(Detection((x0, y0, x1, y1), gt.class_id, score, scene.name))
    for _ in range(rng.poisson(false_rate) if false_rate > 0 else 0):
        w = rng.uniform(low=8, high=size * MAX_REL_SIZE)
        h = rng.uniform(low=8, high=size * MAX_REL_SIZE)
        x0 = rng.uniform(low=0, high=size - w)
        y0 = rng.uniform(low=0, high=size - h)
        dets.append(Detection((x0, y0, x0 + w, y0 + h), rng.randint(0, NUM_GLYPH_CLASSES),
                              1.0 - rng.uniform(), scene.name))
    return dets


def hash_name(name):
    h = 0xCBF29CE484222325
    for byte in name.encode():
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


# ------------------------------------------------------------ on disk

def write_orientation_dataset(samples, out_dir):
    """``out_dir/images/NNNNNN.pgm`` plus ``labels.jsonl`` ({image, label})."""
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    with open(os.path.join(out_dir, "labels.jsonl"), "w") as f:
        for i, s in enumerate(samples):
            rel = f"images/{i:06d}.pgm"
            write_image(os.path.join(out_dir, rel), s.image)
            f.write(json.dumps({"image": rel, "label": int(s.label)}) + "\n")


def read_orientation_dataset(in_dir):
    images, labels = [], []
    with open(os.path.join(in_dir, "labels.jsonl")) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            with open(os.path.join(in_dir, rec["image"]), "rb") as g:
                img = decode_pnm(g.read())
            images.append(img if img.ndim == 2 else img[..., 0])
            labels.append(int(rec["label"]))
    if not images:
        raise ValueError(f"no samples in {in_dir}")
    return np.stack(images), np.array(labels, dtype=np.int64)


def write_scene_dataset(scenes, out_dir):
    """``out_dir/images/<name>.ppm`` plus ``gt.jsonl`` ({image, class_id, box})."""
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    with open(os.path.join(out_dir, "gt.jsonl"), "w") as f:
        for s in scenes:
            write_image(os.path.join(out_dir, "images", f"{s.name}.ppm"),
                        np.repeat(s.image[..., None], 3, axis=2))
            for b in s.boxes:
                f.write(json.dumps({"image": s.name, "class_id": b.class_id,
                                    "box": list(b.box)}) + "\n")
