"""Local HTTP model service: embeddings, NLL scoring, image descriptions."""

from .app import create_app
from .embedder import Embedder
from .scorer import BigramScorer

__all__ = ["create_app", "Embedder", "BigramScorer"]
