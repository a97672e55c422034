"""HTTP service exposing embeddings, NLL scoring, and image descriptions.

Routes
    GET  /healthz       readiness probe, reports per-model load state
    POST /embed/image   {"image_b64": <base64 PNG>} -> {"embedding", "d", "model_tag"}
    POST /embed/text    {"text": ...}               -> {"embedding", "d", "model_tag"}
    POST /score         {"text": ...}               -> {"token_nlls", "token_count", "model_tag"}
    POST /describe      chat-shaped payload, <= 3 images -> plain-text description
    POST /debug/cosine  {"image_b64", "text"}       -> {"cosine"} from the same
                        wire-precision vectors the embed routes return

Models load lazily on first use. A weights directory may be supplied via the
``MODEL_DIR`` environment variable (or ``create_app(model_dir=...)``); it may
contain ``embedder.json`` (``model_tag``, ``color_lexicon``), ``scorer.json``
(``model_tag``, ``alpha``) and ``corpus.txt``. A missing or unreadable
directory surfaces as 503 on every inference route. Vectors are rounded to
float32 before serialisation, and inference is serialised per model, so
concurrent identical requests return identical payloads.
"""

from __future__ import annotations

import base64
import binascii
import json
import os
import threading
from pathlib import Path

import numpy as np
import requests as requests_lib
from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse

from .captioner import Captioner
from .embedder import Embedder
from .scorer import BigramScorer

MAX_BODY_BYTES = 8 * 1024 * 1024
MAX_SCORE_CHARS = 8192
MAX_DESCRIBE_IMAGES = 3
UPSTREAM_TIMEOUT = 30.0


class ModelNotLoaded(Exception):
    """Raised when lazy model loading fails; mapped to HTTP 503."""


def _read_json(path: Path) -> dict:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ModelNotLoaded(f"cannot read weights file {path.name}: {exc}") from exc
    if not isinstance(data, dict):
        raise ModelNotLoaded(f"weights file {path.name} must hold an object")
    return data


class ModelRegistry:
    """Lazily loads the models, serialises inference per model, and reports
    load state for the readiness probe."""

    def __init__(self, model_dir: str | None):
        self.model_dir = model_dir
        self._load_lock = threading.Lock()
        self._locks = {"embedder": threading.Lock(), "scorer": threading.Lock(),
                       "captioner": threading.Lock()}
        self._embedder: Embedder | None = None
        self._scorer: BigramScorer | None = None
        self._captioner: Captioner | None = None
        self._load_error: str | None = None

    def status(self) -> dict:
        if self._load_error is not None:
            state = "error"
        elif self._embedder is not None:
            state = "loaded"
        else:
            state = "unloaded"
        return {"embedder": state, "scorer": state, "captioner": state}

    def _load(self) -> None:
        embed_cfg: dict = {}
        score_cfg: dict = {}
        corpus: str | None = None
        if self.model_dir:
            root = Path(self.model_dir)
            if not root.is_dir():
                raise ModelNotLoaded(f"MODEL_DIR {self.model_dir!r} is not a directory")
            if (root / "embedder.json").exists():
                embed_cfg = _read_json(root / "embedder.json")
            if (root / "scorer.json").exists():
                score_cfg = _read_json(root / "scorer.json")
            corpus_path = root / "corpus.txt"
            if corpus_path.exists():
                try:
                    corpus = corpus_path.read_text(encoding="utf-8")
                except OSError as exc:
                    raise ModelNotLoaded(f"cannot read corpus.txt: {exc}") from exc
        try:
            embedder = Embedder(
                model_tag=embed_cfg.get("model_tag", Embedder().model_tag),
                color_lexicon=embed_cfg.get("color_lexicon"))
            scorer = BigramScorer(
                corpus_text=corpus,
                alpha=float(score_cfg.get("alpha", 0.1)),
                model_tag=score_cfg.get("model_tag", BigramScorer().model_tag))
        except (TypeError, ValueError) as exc:
            raise ModelNotLoaded(f"invalid weights: {exc}") from exc
        self._embedder = embedder
        self._scorer = scorer
        self._captioner = Captioner(embedder)

    def _ensure_loaded(self) -> None:
        with self._load_lock:
            if self._embedder is not None:
                return
            try:
                self._load()
                self._load_error = None
            except ModelNotLoaded as exc:
                self._load_error = str(exc)
                raise

    def embedder(self) -> Embedder:
        self._ensure_loaded()
        assert self._embedder is not None
        return self._embedder

    def scorer(self) -> BigramScorer:
        self._ensure_loaded()
        assert self._scorer is not None
        return self._scorer

    def captioner(self) -> Captioner:
        self._ensure_loaded()
        assert self._captioner is not None
        return self._captioner

    def lock(self, model: str) -> threading.Lock:
        return self._locks[model]


def _wire(vec: np.ndarray) -> list[float]:
    """Round to float32 before serialisation (wire precision contract)."""
    return [float(v) for v in np.asarray(vec, dtype=np.float32)]


def _require_str(payload: dict, key: str) -> str:
    value = payload.get(key)
    if not isinstance(value, str):
        raise HTTPException(400, f"field {key!r} must be a string")
    return value


def _decode_b64(data: str) -> bytes:
    if len(data) > MAX_BODY_BYTES:
        raise HTTPException(413, "image payload exceeds 8 MB")
    try:
        return base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise HTTPException(400, f"invalid base64 image: {exc}") from exc


def _count_images(payload: dict) -> int:
    messages = payload.get("messages")
    if not isinstance(messages, list):
        raise HTTPException(400, "payload must carry a 'messages' list")
    count = 0
    for message in messages:
        content = message.get("content") if isinstance(message, dict) else None
        if not isinstance(content, list):
            continue
        count += sum(1 for part in content
                     if isinstance(part, dict) and part.get("type") == "image_url")
    return count


def _last_image_b64(payload: dict) -> str | None:
    last = None
    for message in payload["messages"]:
        content = message.get("content") if isinstance(message, dict) else None
        if not isinstance(content, list):
            continue
        for part in content:
            if isinstance(part, dict) and part.get("type") == "image_url":
                url = (part.get("image_url") or {}).get("url", "")
                if isinstance(url, str) and "base64," in url:
                    last = url.split("base64,", 1)[1]
    return last


def _upstream_describe(endpoint: str, payload: dict) -> PlainTextResponse:
    forwarded = dict(payload)
    forwarded["stream"] = False  # streaming responses are out of contract
    try:
        resp = requests_lib.post(endpoint, json=forwarded, timeout=UPSTREAM_TIMEOUT)
    except requests_lib.RequestException as exc:
        raise HTTPException(502, f"upstream describe endpoint unreachable: {exc}") from exc
    if resp.status_code != 200:
        headers = {}
        retry_after = resp.headers.get("Retry-After")
        if retry_after is not None:
            headers["Retry-After"] = retry_after
        raise HTTPException(502, f"upstream describe endpoint returned "
                                 f"{resp.status_code}: {resp.text[:200]}",
                            headers=headers or None)
    try:
        body = resp.json()
    except ValueError:
        return PlainTextResponse(resp.text)
    if isinstance(body, dict):
        choices = body.get("choices")
        if isinstance(choices, list) and choices:
            content = (choices[0].get("message") or {}).get("content")
            if isinstance(content, str):
                return PlainTextResponse(content)
        if isinstance(body.get("text"), str):
            return PlainTextResponse(body["text"])
    return PlainTextResponse(resp.text)


def create_app(model_dir: str | None = None, token: str | None = None,
               describe_upstream: str | None = None) -> FastAPI:
    """Build the service app.

    Arguments default to the environment: ``MODEL_DIR`` for weights,
    ``MODELSVC_TOKEN`` for the shared bearer token, and
    ``MODELSVC_DESCRIBE_UPSTREAM`` for the describe proxy target.
    """
    if model_dir is None:
        model_dir = os.environ.get("MODEL_DIR") or None
    if token is None:
        token = os.environ.get("MODELSVC_TOKEN") or None
    if describe_upstream is None:
        describe_upstream = os.environ.get("MODELSVC_DESCRIBE_UPSTREAM") or None

    registry = ModelRegistry(model_dir)
    app = FastAPI(title="modelsvc", docs_url=None, redoc_url=None)
    app.state.registry = registry

    async def guarded(request: Request) -> None:
        length = request.headers.get("content-length")
        if length is not None and length.isdigit() and int(length) > MAX_BODY_BYTES:
            raise HTTPException(413, "request body exceeds 8 MB")
        if token is not None:
            if request.headers.get("authorization") != f"Bearer {token}":
                raise HTTPException(401, "missing or invalid bearer token")

    dep = [Depends(guarded)]

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse({"detail": "malformed request body"}, status_code=400)

    @app.exception_handler(ModelNotLoaded)
    async def model_unavailable(request: Request, exc: ModelNotLoaded):
        return JSONResponse({"detail": f"model not loaded: {exc}"}, status_code=503)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "models": registry.status()}

    def _embed_image_vec(image_b64: str) -> tuple[list[float], Embedder]:
        png = _decode_b64(image_b64)
        model = registry.embedder()
        with registry.lock("embedder"):
            try:
                vec = model.embed_image(png)
            except ValueError as exc:
                raise HTTPException(400, str(exc)) from exc
        return _wire(vec), model

    def _embed_text_vec(text: str) -> tuple[list[float], Embedder]:
        model = registry.embedder()
        with registry.lock("embedder"):
            try:
                vec = model.embed_text(text)
            except ValueError as exc:
                raise HTTPException(400, str(exc)) from exc
        return _wire(vec), model

    @app.post("/embed/image", dependencies=dep)
    def embed_image(payload: dict) -> dict:
        wire, model = _embed_image_vec(_require_str(payload, "image_b64"))
        return {"embedding": wire, "d": model.dim, "model_tag": model.model_tag}

    @app.post("/embed/text", dependencies=dep)
    def embed_text(payload: dict) -> dict:
        wire, model = _embed_text_vec(_require_str(payload, "text"))
        return {"embedding": wire, "d": model.dim, "model_tag": model.model_tag}

    @app.post("/score", dependencies=dep)
    def score(payload: dict) -> dict:
        text = _require_str(payload, "text")
        if len(text) > MAX_SCORE_CHARS:
            raise HTTPException(400, f"text exceeds {MAX_SCORE_CHARS} characters")
        model = registry.scorer()
        with registry.lock("scorer"):
            nlls = model.token_nlls(text)
        wire = [float(v) for v in np.asarray(nlls, dtype=np.float32)]
        return {"token_nlls": wire, "token_count": len(wire),
                "model_tag": model.model_tag}

    @app.post("/describe", dependencies=dep)
    def describe(payload: dict) -> PlainTextResponse:
        n_images = _count_images(payload)
        if n_images > MAX_DESCRIBE_IMAGES:
            raise HTTPException(400, f"at most {MAX_DESCRIBE_IMAGES} images per "
                                     f"request, got {n_images}")
        if describe_upstream is not None:
            return _upstream_describe(describe_upstream, payload)
        image_b64 = _last_image_b64(payload)
        if image_b64 is None:
            raise HTTPException(400, "no image found in messages")
        png = _decode_b64(image_b64)
        model = registry.captioner()
        with registry.lock("captioner"):
            try:
                text = model.describe(png)
            except ValueError as exc:
                raise HTTPException(400, str(exc)) from exc
        return PlainTextResponse(text)

    @app.post("/debug/cosine", dependencies=dep)
    def debug_cosine(payload: dict) -> dict:
        img_wire, _ = _embed_image_vec(_require_str(payload, "image_b64"))
        txt_wire, _ = _embed_text_vec(_require_str(payload, "text"))
        a = np.asarray(img_wire, dtype=np.float64)
        b = np.asarray(txt_wire, dtype=np.float64)
        denom = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
        if denom == 0.0:
            raise HTTPException(400, "zero vector in cosine")
        return {"cosine": float(a @ b / denom)}

    return app
