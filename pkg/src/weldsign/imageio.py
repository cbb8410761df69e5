"""Portable-pixmap I/O plus the geometric image helpers the pipeline needs."""

from __future__ import annotations

import os

import numpy as np


class ImageFormatError(ValueError):
    pass


def _tokens(data, count, pos):
    out = []
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PNM header")
        out.append(data[start:pos])
    return out, pos + 1


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode binary P5/P6 to uint8 ``H x W`` (P5) or ``H x W x 3`` (P6)."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported PNM magic {magic!r}")
    (w, h, maxval), pos = _tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit PNM supported (maxval {maxval})")
    ch = 1 if magic == b"P5" else 3
    n = w * h * ch
    pix = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos) if len(data) - pos >= n else None
    if pix is None:
        raise ImageFormatError("truncated PNM pixel data")
    return pix.reshape((h, w) if ch == 1 else (h, w, 3)).copy()


def encode_pnm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ImageFormatError("encode_pnm expects uint8 pixels")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot encode shape {img.shape} as PNM")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes()


def read_image(path) -> np.ndarray:
    """Read PPM/PGM (or PNG via Pillow) as uint8 ``H x W x 3``."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".png":
        from PIL import Image
        img = np.asarray(Image.open(path).convert("RGB"))
    else:
        with open(path, "rb") as f:
            img = decode_pnm(f.read())
    return to_rgb(img)


def write_image(path, img):
    img = np.asarray(img)
    if str(path).lower().endswith(".png"):
        from PIL import Image
        Image.fromarray(img).save(path)
        return
    with open(path, "wb") as f:
        f.write(encode_pnm(img))


def to_rgb(img):
    return np.repeat(img[..., None], 3, axis=2) if img.ndim == 2 else img


def quantize(x):
    """Map [0, 1] floats to uint8 with round-half-even."""
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def rotate_cw(img, quarter_turns=1):
    return np.rot90(img, -quarter_turns, axes=(0, 1)).copy()


def rotate_ccw(img, quarter_turns=1):
    return np.rot90(img, quarter_turns, axes=(0, 1)).copy()


def resize_bilinear(img, out_h, out_w):
    """Half-pixel-centre bilinear resize of ``H x W [x C]`` to float32."""
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[:2]

    def coords(n_out, n_in):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo).astype(np.float32)

    y0, y1, fy = coords(out_h, h)
    x0, x1, fx = coords(out_w, w)
    if img.ndim == 3:
        fy = fy[:, None, None]
        fxx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fxx = fx[None, :]
    top = img[y0][:, x0] * (1 - fxx) + img[y0][:, x1] * fxx
    bot = img[y1][:, x0] * (1 - fxx) + img[y1][:, x1] * fxx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def tile_image(img, tile=416):
    """Non-overlapping ``tile x tile`` grid; edge tiles are zero-padded.

    Returns a list of ``(tile array, (row offset, col offset))``.
    """
    h, w = img.shape[:2]
    tiles = []
    for top in range(0, h, tile):
        for left in range(0, w, tile):
            patch = img[top:top + tile, left:left + tile]
            if patch.shape[:2] != (tile, tile):
                padded = np.zeros((tile, tile) + img.shape[2:], dtype=img.dtype)
                padded[:patch.shape[0], :patch.shape[1]] = patch
                patch = padded
            tiles.append((patch, (top, left)))
    return tiles


def untile(tiles, height, width):
    first = tiles[0][0]
    out = np.zeros((height, width) + first.shape[2:], dtype=first.dtype)
    for patch, (top, left) in tiles:
        h = min(patch.shape[0], height - top)
        w = min(patch.shape[1], width - left)
        out[top:top + h, left:left + w] = patch[:h, :w]
    return out
