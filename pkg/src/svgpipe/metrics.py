"""Evaluation metrics: FID, CLIP score, FID-CLIP, file size, primitives used.

Feature vectors arrive from an external embedding provider; this module only
does the distribution math. All reductions are sequential numpy operations,
so results are bitwise stable for fixed inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import core, reconstruct
from .errors import (
    CovarianceRankError,
    DimensionMismatch,
    EmptyInput,
    NonFiniteInput,
    NumericalFailure,
    SvgPipeError,
    ZeroVector,
)

EIG_CLAMP = 1e-10


@dataclass
class FeatureSet:
    vectors: np.ndarray        # (count, d) float64
    source_tag: str = ""

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatch(f"feature matrix must be 2-D, got {arr.ndim}-D")
        if arr.shape[1] < 2:
            raise DimensionMismatch(f"feature dimension must be >= 2, got {arr.shape[1]}")
        if not np.isfinite(arr).all():
            raise NonFiniteInput("feature vectors contain non-finite entries")
        self.vectors = arr

    @property
    def d(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])


def save_features(features: FeatureSet, path) -> None:
    """Binary little-endian float32 matrix plus a JSON sidecar header."""
    path = Path(path)
    path.write_bytes(features.vectors.astype("<f4").tobytes(order="C"))
    sidecar = {"d": features.d, "count": features.count,
               "source_tag": features.source_tag}
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_features(path) -> FeatureSet:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    expected = sidecar["count"] * sidecar["d"]
    if raw.size != expected:
        raise DimensionMismatch(
            f"feature file holds {raw.size} floats, header says {expected}")
    vectors = raw.reshape(sidecar["count"], sidecar["d"]).astype(np.float64)
    return FeatureSet(vectors=vectors, source_tag=sidecar.get("source_tag", ""))


def _mean_cov(fs: FeatureSet) -> tuple:
    if fs.count < fs.d + 1:
        raise CovarianceRankError(
            f"need at least d+1 = {fs.d + 1} vectors, got {fs.count}")
    mu = fs.vectors.mean(axis=0)
    sigma = np.cov(fs.vectors, rowvar=False)   # unbiased (ddof=1)
    return mu, sigma


def _sym_eigh(matrix: np.ndarray) -> tuple:
    sym = (matrix + matrix.T) / 2.0
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    return vals, vecs


def fid(real: FeatureSet, gen: FeatureSet) -> float:
    """Fréchet distance between Gaussian fits of the two feature sets.

    ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the matrix square
    root taken by symmetric eigendecomposition: sqrt(S1) first, then
    sqrt(sqrt(S1) S2 sqrt(S1)), eigenvalues below EIG_CLAMP set to 0. A small
    negative total from floating point is clamped to 0.
    """
    if real.d != gen.d:
        raise DimensionMismatch(f"dimension mismatch: {real.d} vs {gen.d}")
    mu1, s1 = _mean_cov(real)
    mu2, s2 = _mean_cov(gen)

    vals1, vecs1 = _sym_eigh(s1)
    vals1 = np.where(vals1 < EIG_CLAMP, 0.0, vals1)
    root1 = vecs1 @ np.diag(np.sqrt(vals1)) @ vecs1.T

    inner = root1 @ s2 @ root1
    vals_m, _ = _sym_eigh(inner)
    vals_m = np.where(vals_m < EIG_CLAMP, 0.0, vals_m)
    tr_sqrt = float(np.sqrt(vals_m).sum())

    diff = mu1 - mu2
    value = float(diff @ diff) + float(np.trace(s1)) + float(np.trace(s2)) \
        - 2.0 * tr_sqrt
    return max(value, 0.0)


fid_clip = fid   # identical computation over CLIP-family image features


def clip_score(image_vecs: FeatureSet, text_vecs: FeatureSet) -> float:
    """Mean cosine similarity over index-paired image/text vectors."""
    if image_vecs.d != text_vecs.d:
        raise DimensionMismatch(
            f"dimension mismatch: {image_vecs.d} vs {text_vecs.d}")
    if image_vecs.count != text_vecs.count:
        raise DimensionMismatch(
            f"count mismatch: {image_vecs.count} vs {text_vecs.count}")
    a = image_vecs.vectors
    b = text_vecs.vectors
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if (na == 0).any() or (nb == 0).any():
        raise ZeroVector("zero vector in cosine similarity input")
    sims = (a * b).sum(axis=1) / (na * nb)
    return float(sims.mean())


@dataclass
class SvgStats:
    avg_file_size_kb: float
    avg_primitives_used: float
    counted: int
    degenerate: int            # zero-primitive documents excluded from averages

    def __iter__(self):
        return iter((self.avg_file_size_kb, self.avg_primitives_used))


def svg_stats(docs: list) -> SvgStats:
    """Average canonical size (KB) and primitive count over a document set.

    Accepts parsed documents or raw SVG bytes/str.  Unparseable inputs and
    documents with zero primitives are flagged degenerate and excluded from
    both averages.
    """
    if not docs:
        raise EmptyInput("svg_stats needs at least one document")
    sizes, prims = [], []
    degenerate = 0
    for doc in docs:
        try:
            if isinstance(doc, (bytes, str)):
                raw = doc.encode("utf-8") if isinstance(doc, str) else doc
                doc = core.parse_svg(raw)
            n = reconstruct.primitive_count(doc)
        except SvgPipeError:
            n = 0
        if n == 0:
            degenerate += 1
            continue
        sizes.append(core.svg_length(doc) / 1024.0)
        prims.append(n)
    if not sizes:
        return SvgStats(avg_file_size_kb=0.0, avg_primitives_used=0.0,
                        counted=0, degenerate=degenerate)
    import math

    return SvgStats(avg_file_size_kb=math.fsum(sizes) / len(sizes),
                    avg_primitives_used=math.fsum(prims) / len(prims),
                    counted=len(sizes), degenerate=degenerate)


@dataclass
class MetricsReport:
    fid: float | None
    clip_score: float | None
    fid_clip: float | None
    avg_file_size_kb: float | None
    avg_primitives_used: float | None
    sample_count: int

    def to_json(self) -> str:
        def rnd(v, places):
            return None if v is None else round(v, places)

        payload = {
            "fid": rnd(self.fid, 6),
            "clip_score": rnd(self.clip_score, 6),
            "fid_clip": rnd(self.fid_clip, 6),
            "avg_file_size_kb": rnd(self.avg_file_size_kb, 2),
            "avg_primitives_used": rnd(self.avg_primitives_used, 3),
            "sample_count": self.sample_count,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def write_report(report: MetricsReport, path) -> None:
    Path(path).write_text(report.to_json() + "\n", encoding="utf-8")
