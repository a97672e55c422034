"""Deterministic token-level NLL scoring with a tiny bigram language model.

The model is trained once, at load time, on a small built-in English corpus
(optionally replaced via a ``corpus.txt`` in the weights directory) with
Laplace smoothing. Probabilities are always strictly below 1, so every
negative log-likelihood is finite and non-negative. Tokenisation is plain
whitespace splitting, so ``token_count`` equals ``len(text.split())`` and an
empty string scores to an empty list.
"""

from __future__ import annotations

import math
import re
from collections import Counter

MODEL_TAG = "bigram-lm-v1"

_START = "<s>"
_UNK = "<unk>"

DEFAULT_CORPUS = """\
the red circle sits on a white background
a blue square sits next to the red circle
the small green triangle points to the right
a large yellow circle appears in the center of the image
the picture shows a simple scene with three shapes
each new step adds one more shape to the drawing
the artist draws a thin black line across the bottom
two overlapping circles form the body of the figure
the final image contains a row of colored squares
a purple rectangle appears behind the large blue circle
the top of the scene holds a small orange triangle
a gray line crosses the middle of the canvas
the drawing begins with a plain white background
the next element is a tall green rectangle on the left
a small red dot marks the center of the large circle
the bottom half of the image is filled with dark blue
a black outline surrounds the white shape
the scene shows a house with a red roof and a brown door
a yellow star shines above the little house
the sun is a bright orange circle in the corner
three small birds fly over the green hills
the tree has a brown trunk and a round green top
a simple flower grows near the edge of the picture
the cat sits under the table in the kitchen
the dog runs across the yard after the ball
a child draws a picture of the family home
the teacher points to the board at the front of the room
water flows under the old stone bridge
the train moves along the track toward the station
light from the window falls on the wooden floor
the book lies open on the desk near the lamp
she places the cup on the small round table
he walks down the street to the corner store
the children play in the park after school
rain falls on the roof during the long night
the first shape is a circle and the second shape is a square
the last step draws the final detail of the image
one more triangle completes the simple pattern
the colors of the shapes range from red to deep purple
a narrow band of gray runs along the top edge
the large square overlaps the small circle near the corner
every element of the drawing has a clear outline
the image ends with a single black dot in the middle
the left side of the canvas stays empty and white
a pair of green leaves hangs from the thin brown branch
the second circle is slightly larger than the first
"""


def _normalize(token: str) -> str:
    word = re.sub(r"[^a-z']", "", token.lower())
    return word or _UNK


class BigramScorer:
    """Laplace-smoothed bigram model over a fixed training corpus."""

    def __init__(self, corpus_text: str | None = None, alpha: float = 0.1,
                 model_tag: str = MODEL_TAG):
        if alpha <= 0.0:
            raise ValueError("smoothing constant must be positive")
        self.alpha = float(alpha)
        self.model_tag = model_tag
        corpus = corpus_text if corpus_text is not None else DEFAULT_CORPUS

        self._bigrams: Counter[tuple[str, str]] = Counter()
        self._contexts: Counter[str] = Counter()
        vocab: set[str] = {_UNK}
        for line in corpus.splitlines():
            words = [_normalize(t) for t in line.split()]
            words = [w for w in words if w != _UNK]
            if not words:
                continue
            vocab.update(words)
            prev = _START
            for word in words:
                self._bigrams[(prev, word)] += 1
                self._contexts[prev] += 1
                prev = word
        if len(vocab) < 2:
            raise ValueError("training corpus is empty")
        self._vocab = vocab
        self._vocab_size = len(vocab)

    def _nll(self, prev: str, word: str) -> float:
        num = self._bigrams[(prev, word)] + self.alpha
        den = self._contexts[prev] + self.alpha * self._vocab_size
        return -math.log(num / den)

    def token_nlls(self, text: str) -> list[float]:
        """One NLL per whitespace token of ``text``; empty text scores []."""
        nlls: list[float] = []
        prev = _START
        for token in text.split():
            word = _normalize(token)
            if word not in self._vocab:
                word = _UNK
            nlls.append(self._nll(prev, word))
            prev = word
        return nlls
