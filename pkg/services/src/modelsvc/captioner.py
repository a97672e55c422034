"""Local image captioner built on the embedder's image measurements.

Serves /describe when no upstream multimodal endpoint is configured. Output
is a short deterministic sentence naming the dominant colour and silhouette,
which is always non-empty.
"""

from __future__ import annotations

import math

import numpy as np

from .embedder import Embedder, _shape_profile, image_stats

MODEL_TAG = "stats-captioner-v1"

_SHAPE_NAMES = ("circle", "square", "triangle")
_SHAPE_CONFIDENCE = 0.3


class Captioner:
    def __init__(self, embedder: Embedder, model_tag: str = MODEL_TAG):
        self.embedder = embedder
        self.model_tag = model_tag

    def _color_name(self, mean_rgb: tuple[float, float, float]) -> str:
        best_name = "colored"
        best_dist = math.inf
        for name, rgb in self.embedder.color_lexicon.items():
            dist = sum((a - b) ** 2 for a, b in zip(mean_rgb, rgb))
            if dist < best_dist:
                best_name, best_dist = name, dist
        return best_name

    def describe(self, png: bytes) -> str:
        stats = image_stats(png)
        if stats.blank:
            return "a blank white canvas"
        color = self._color_name(stats.mean_rgb)
        profile = _shape_profile(stats.fill_ratio)
        if float(profile.max()) >= _SHAPE_CONFIDENCE:
            shape = _SHAPE_NAMES[int(np.argmax(profile))]
        else:
            shape = "shape"
        if stats.coverage >= 0.3:
            size = "large "
        elif stats.coverage < 0.1:
            size = "small "
        else:
            size = ""
        return f"a {size}{color} {shape} on a white background"
