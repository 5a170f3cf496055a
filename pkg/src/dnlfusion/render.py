"""Classification maps as binary PPM (P6) images."""

from __future__ import annotations

import colorsys
import os

import numpy as np

_BASE = [
    (0, 0, 0),
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 212),
    (0, 128, 128),
    (220, 190, 255),
    (170, 110, 40),
    (255, 250, 200),
    (128, 0, 0),
]


def default_palette(num_classes: int) -> np.ndarray:
    """``num_classes + 1`` distinct RGB colors; index 0 (unlabeled) is black."""
    colors = list(_BASE[: num_classes + 1])
    i = 0
    while len(colors) < num_classes + 1:
        hue = (0.618033988749895 * i) % 1.0
        rgb = tuple(int(round(255 * v)) for v in colorsys.hsv_to_rgb(hue, 0.65, 0.9))
        if rgb not in colors:
            colors.append(rgb)
        i += 1
    return np.array(colors, dtype=np.uint8)


def colorize(predictions: np.ndarray, palette) -> np.ndarray:
    predictions = np.asarray(predictions)
    palette = np.asarray(palette, dtype=np.uint8)
    if predictions.ndim != 2:
        raise ValueError(f"predictions must be a 2-D class-id map, got shape {predictions.shape}")
    if predictions.size and (predictions.min() < 0 or predictions.max() >= len(palette)):
        raise ValueError(
            f"class ids span [{predictions.min()}, {predictions.max()}] "
            f"but the palette only covers 0..{len(palette) - 1}"
        )
    return palette[predictions]


def encode_ppm(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def parse_ppm(data: bytes) -> np.ndarray:
    """Decode a P6 image with maxval 255 into an ``(h, w, 3)`` uint8 array."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ValueError("only binary P6 images with maxval 255 are supported")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return pixels.reshape(h, w, 3).copy()


def decode_map(rgb: np.ndarray, palette) -> np.ndarray:
    """Invert :func:`colorize` for a palette of distinct colors."""
    palette = np.asarray(palette, dtype=np.uint8)
    keys = rgb.astype(np.int64) @ np.array([65536, 256, 1])
    pkeys = palette.astype(np.int64) @ np.array([65536, 256, 1])
    lookup = {int(k): i for i, k in enumerate(pkeys)}
    if len(lookup) != len(palette):
        raise ValueError("palette colors are not distinct")
    try:
        return np.vectorize(lambda k: lookup[int(k)])(keys).astype(np.int64)
    except KeyError as exc:
        raise ValueError(f"pixel color {exc} is not in the palette") from None


def render_map(predictions: np.ndarray, palette, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(colorize(predictions, palette)))
