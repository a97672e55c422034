"""Shared fixtures for the model-service tests: deterministic shape images,
the 10-pair caption/embedding golden set, and the 10 fluency fixtures."""

from __future__ import annotations

import base64
import io
import random

from PIL import Image, ImageDraw

from modelsvc.embedder import COLOR_RGB


def draw_png(shape: str, color: str, size: int = 64, margin: int = 12) -> bytes:
    """Render one solid shape on a white canvas as PNG bytes."""
    im = Image.new("RGB", (size, size), (255, 255, 255))
    d = ImageDraw.Draw(im)
    rgb = tuple(round(c * 255) for c in COLOR_RGB[color])
    lo, hi = margin, size - margin
    if shape == "circle":
        d.ellipse([lo, lo, hi, hi], fill=rgb)
    elif shape == "square":
        d.rectangle([lo, lo, hi, hi], fill=rgb)
    elif shape == "triangle":
        d.polygon([(size // 2, lo), (lo, hi), (hi, hi)], fill=rgb)
    else:
        raise ValueError(f"unknown fixture shape {shape!r}")
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


# (shape, color, matching caption, mismatched caption) — five pairs are
# colour-discriminating, five are shape-discriminating.
GOLDEN_SPECS = [
    ("circle", "red", "a red circle", "a blue truck"),
    ("square", "blue", "a blue square", "a red circle"),
    ("triangle", "green", "a green triangle", "a purple square"),
    ("circle", "yellow", "a yellow circle", "a blue circle"),
    ("square", "purple", "a purple square", "a purple circle"),
    ("triangle", "orange", "an orange triangle", "an orange square"),
    ("square", "red", "a red square", "a green square"),
    ("circle", "blue", "a blue circle", "a blue triangle"),
    ("circle", "green", "a small green circle", "a small red circle"),
    ("square", "black", "a black square", "a white circle"),
]

GOLDEN_PAIRS = [(draw_png(shape, color), good, bad)
                for shape, color, good, bad in GOLDEN_SPECS]

# Fluent in-vocabulary sentences held out from the scorer's training corpus.
FLUENCY_FIXTURES = [
    "the red circle sits next to the blue square",
    "a small green triangle appears in the corner of the image",
    "the artist draws a thin gray line across the top",
    "the picture shows a simple house with a red roof",
    "a large yellow circle shines above the green hills",
    "the next step adds a small black dot to the center",
    "a pair of green leaves hangs from the branch",
    "the final image contains three colored shapes",
    "the dog runs across the park after the ball",
    "water flows under the bridge near the old store",
]


def shuffled(sentence: str, seed: int) -> str:
    """Deterministic word shuffle guaranteed to differ from the original."""
    words = sentence.split()
    rng = random.Random(seed)
    out = words[:]
    while out == words:
        rng.shuffle(out)
    return " ".join(out)


def data_url(png: bytes) -> str:
    return "data:image/png;base64," + base64.b64encode(png).decode("ascii")


def chat_payload(text: str, images: list[bytes]) -> dict:
    """Build a chat-shaped /describe payload carrying the given images."""
    content = [{"type": "text", "text": text}]
    content += [{"type": "image_url", "image_url": {"url": data_url(p)}}
                for p in images]
    return {"messages": [{"role": "user", "content": content}]}
