"""Deterministic joint image/text embedding model.

Both modalities project into one hand-built 16-dimensional feature space so
that cosine similarity between an image and a caption is meaningful:

    dims  0-2   mean foreground RGB (image) / lexicon RGB of colour words (text)
    dims  3-8   six-bucket hue histogram: red, yellow, green, cyan, blue, magenta
    dims  9-11  shape profile: roundness, squareness, triangleness
    dim   12    canvas coverage fraction (image) / size-word prior (text)
    dim   13    blank flag, set when no feature fires (keeps vectors non-zero)
    dims 14-15  reserved

Vectors are L2-normalised, so every response satisfies the unit-norm
contract, and the whole path is pure arithmetic on the input bytes, so
repeated calls return identical vectors.
"""

from __future__ import annotations

import io
import math
import re
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

DIM = 16
MODEL_TAG = "palette-embed-v1-d16"

# Foreground = anything that is not close to the white background.
_BG_DISTANCE = 0.08
# Hue histogram only counts reasonably saturated, reasonably bright pixels.
_MIN_VALUE = 0.15
_MIN_SATURATION = 0.25
# Bounding-box fill ratios of the reference silhouettes.
_FILL_CIRCLE = math.pi / 4.0
_FILL_SQUARE = 1.0
_FILL_TRIANGLE = 0.5
_FILL_WIDTH = 0.09

COLOR_RGB: dict[str, tuple[float, float, float]] = {
    "red": (1.0, 0.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "green": (0.0, 0.5, 0.0),
    "yellow": (1.0, 1.0, 0.0),
    "orange": (1.0, 0.65, 0.0),
    "purple": (0.5, 0.0, 0.5),
    "magenta": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
    "pink": (1.0, 0.75, 0.8),
    "brown": (0.6, 0.4, 0.2),
    "black": (0.0, 0.0, 0.0),
    "white": (1.0, 1.0, 1.0),
    "gray": (0.5, 0.5, 0.5),
    "grey": (0.5, 0.5, 0.5),
}

# word -> index into the shape-profile dims (0 round, 1 square, 2 triangle)
SHAPE_WORDS: dict[str, int] = {
    "circle": 0, "circles": 0, "dot": 0, "dots": 0, "disk": 0, "ball": 0,
    "ellipse": 0, "round": 0,
    "square": 1, "squares": 1, "rectangle": 1, "rectangles": 1, "rect": 1,
    "box": 1, "block": 1, "bar": 1,
    "triangle": 2, "triangles": 2, "wedge": 2,
}

SIZE_WORDS: dict[str, float] = {
    "huge": 0.60, "large": 0.45, "big": 0.45,
    "small": 0.08, "little": 0.08, "tiny": 0.04,
}
_DEFAULT_COVERAGE = 0.2


def hue_bucket(rgb: tuple[float, float, float]) -> int | None:
    """Map one RGB triple (components in [0, 1]) to a hue bucket, or None
    when the colour is too dark or too desaturated to carry a hue."""
    r, g, b = rgb
    mx = max(r, g, b)
    mn = min(r, g, b)
    delta = mx - mn
    if mx <= _MIN_VALUE or delta / mx <= _MIN_SATURATION:
        return None
    if mx == r:
        h = 60.0 * (((g - b) / delta) % 6.0)
    elif mx == g:
        h = 60.0 * ((b - r) / delta + 2.0)
    else:
        h = 60.0 * ((r - g) / delta + 4.0)
    return int(((h + 30.0) % 360.0) // 60.0)


def _shape_profile(fill_ratio: float) -> np.ndarray:
    """Soft match of a bounding-box fill ratio against circle/square/triangle."""
    centers = np.array([_FILL_CIRCLE, _FILL_SQUARE, _FILL_TRIANGLE])
    return np.exp(-(((fill_ratio - centers) / _FILL_WIDTH) ** 2))


@dataclass(frozen=True)
class ImageStats:
    """Raw image measurements shared by the embedder and the captioner."""

    blank: bool
    mean_rgb: tuple[float, float, float]
    hue_hist: tuple[float, ...]
    fill_ratio: float
    coverage: float


def image_stats(png: bytes) -> ImageStats:
    try:
        with Image.open(io.BytesIO(png)) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ValueError(f"undecodable image: {exc}") from exc
    if rgb.ndim != 3 or rgb.size == 0:
        raise ValueError("undecodable image: empty raster")

    fg = (1.0 - rgb.min(axis=2)) > _BG_DISTANCE
    count = int(fg.sum())
    if count == 0:
        return ImageStats(True, (1.0, 1.0, 1.0), (0.0,) * 6, 0.0, 0.0)

    pix = rgb[fg]
    mean_rgb = pix.mean(axis=0)

    mx = pix.max(axis=1)
    mn = pix.min(axis=1)
    delta = mx - mn
    sat = np.divide(delta, mx, out=np.zeros_like(delta), where=mx > 0)
    hued = (mx > _MIN_VALUE) & (sat > _MIN_SATURATION)
    hist = np.zeros(6)
    if hued.any():
        r, g, b = pix[hued, 0], pix[hued, 1], pix[hued, 2]
        d = delta[hued]
        m = mx[hued]
        h = np.where(
            m == r, 60.0 * (((g - b) / d) % 6.0),
            np.where(m == g, 60.0 * ((b - r) / d + 2.0),
                     60.0 * ((r - g) / d + 4.0)))
        buckets = (((h + 30.0) % 360.0) // 60.0).astype(int)
        hist = np.bincount(buckets, minlength=6).astype(np.float64) / count

    ys, xs = np.nonzero(fg)
    bbox_area = (int(xs.max()) - int(xs.min()) + 1) * (int(ys.max()) - int(ys.min()) + 1)
    fill_ratio = count / bbox_area
    coverage = count / fg.size
    return ImageStats(False, tuple(float(c) for c in mean_rgb),
                      tuple(float(v) for v in hist), float(fill_ratio),
                      float(coverage))


def _finish(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec = vec.copy()
        vec[13] = 1.0
        norm = 1.0
    return vec / norm


class Embedder:
    """Joint image/text embedder with deterministic inference."""

    def __init__(self, model_tag: str = MODEL_TAG,
                 color_lexicon: dict[str, tuple[float, float, float]] | None = None):
        self.model_tag = model_tag
        self.dim = DIM
        self.color_lexicon = dict(COLOR_RGB)
        if color_lexicon:
            self.color_lexicon.update(
                {k.lower(): tuple(float(c) for c in v)
                 for k, v in color_lexicon.items()})

    def embed_image(self, png: bytes) -> np.ndarray:
        stats = image_stats(png)
        vec = np.zeros(DIM)
        if stats.blank:
            vec[13] = 1.0
            return _finish(vec)
        vec[0:3] = stats.mean_rgb
        vec[3:9] = stats.hue_hist
        vec[9:12] = _shape_profile(stats.fill_ratio)
        vec[12] = stats.coverage
        return _finish(vec)

    def embed_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        words = re.findall(r"[a-z]+", text.lower())
        vec = np.zeros(DIM)

        colors = [self.color_lexicon[w] for w in words if w in self.color_lexicon]
        if colors:
            vec[0:3] = np.mean(np.asarray(colors, dtype=np.float64), axis=0)
            buckets = [hue_bucket(c) for c in colors]
            buckets = [b for b in buckets if b is not None]
            for b in buckets:
                vec[3 + b] += 1.0 / len(colors)

        shapes = [SHAPE_WORDS[w] for w in words if w in SHAPE_WORDS]
        for idx in shapes:
            vec[9 + idx] += 1.0 / len(shapes)

        sizes = [SIZE_WORDS[w] for w in words if w in SIZE_WORDS]
        if sizes:
            vec[12] = float(np.mean(sizes))
        elif colors or shapes:
            vec[12] = _DEFAULT_COVERAGE

        return _finish(vec)
