"""Multi-round multimodal annotation over a chat-completions endpoint.

One session per sample: a system turn, then one global-description turn over
the final frame, then one turn per transition carrying exactly three images
(current frame, previous frame, final frame). The full history rides along on
every request so the endpoint sees the whole dialogue; turns are appended only
after a successful response, so retries never duplicate history.

Annotated transitions are I_1 -> I_2 ... I_{n-1} -> I_n: step text i describes
what frame i+1 added over frame i (recorded in the output metadata).
"""

from __future__ import annotations

import base64
import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import requests

from . import dataset as dataset_mod
from . import raster
from .errors import (
    ContextOverflow,
    EmptyResponse,
    EndpointError,
    ProviderError,
    ZeroVector,
)

TEMPLATE_DIR = Path(__file__).parent / "templates"
TEMPLATE_NAMES = ("system", "global", "step")

STEP_TEXT_CAP = 512
TRUNCATION_MARKER = "..."
DEFAULT_CLIP_THRESHOLD = 0.22
DEFAULT_PPL_THRESHOLD = 40.0

# Proactive guard; endpoints with smaller windows surface ContextOverflow
# through their own 4xx responses as well.
MAX_HISTORY_CHARS = 200_000


def load_templates(directory: Path | None = None) -> dict:
    directory = Path(directory) if directory else TEMPLATE_DIR
    return {name: (directory / f"{name}.txt").read_text(encoding="utf-8").strip()
            for name in TEMPLATE_NAMES}


def template_hashes(templates: dict | None = None) -> dict:
    if templates is None:
        templates = load_templates()
    return {name: dataset_mod.template_hash(text)
            for name, text in sorted(templates.items())}


class StepText(tuple):
    """(index, text) pair; index is the 1-based transition number."""
    __slots__ = ()

    def __new__(cls, index: int, text: str):
        return super().__new__(cls, (index, text))

    @property
    def index(self):
        return self[0]

    @property
    def text(self):
        return self[1]


@dataclass
class AnnotationRecord:
    sample_id: str
    t_g: str = ""
    steps: list = field(default_factory=list)      # StepText entries
    clip_score: Optional[float] = None
    perplexity: Optional[float] = None
    accepted: Optional[bool] = None
    flags: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "sample_id": self.sample_id,
            "t_g": self.t_g,
            "steps": [{"index": i, "text": t} for i, t in self.steps],
            "clip_score": self.clip_score,
            "perplexity": self.perplexity,
            "accepted": self.accepted,
            "flags": self.flags,
            "metadata": self.metadata,
        }
        return json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AnnotationRecord":
        raw = json.loads(text)
        return cls(sample_id=raw["sample_id"], t_g=raw["t_g"],
                   steps=[StepText(s["index"], s["text"]) for s in raw["steps"]],
                   clip_score=raw.get("clip_score"),
                   perplexity=raw.get("perplexity"),
                   accepted=raw.get("accepted"),
                   flags=raw.get("flags", []),
                   metadata=raw.get("metadata", {}))


@dataclass
class DialogueTurn:
    role: str                  # system | user | assistant
    text: str
    images: list = field(default_factory=list)     # PNG byte strings

    def to_wire(self) -> dict:
        if not self.images:
            return {"role": self.role, "content": self.text}
        parts = [{"type": "text", "text": self.text}]
        for png in self.images:
            b64 = base64.b64encode(png).decode("ascii")
            parts.append({"type": "image_url",
                          "image_url": {"url": f"data:image/png;base64,{b64}"}})
        return {"role": self.role, "content": parts}


class ChatClient:
    """Chat-completions transport with bounded retries.

    Retries transport failures and 5xx responses 3 times with exponential
    backoff starting at 1s, jittered. 4xx responses mentioning context or
    token limits raise ContextOverflow; other 4xx fail immediately.
    """

    def __init__(self, endpoint: str, api_key: str = "", model: str = "default",
                 timeout: float = 120.0, max_attempts: int = 3,
                 backoff: float = 1.0, rng: random.Random | None = None,
                 sleep: Callable[[float], None] = time.sleep,
                 session: requests.Session | None = None):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.rng = rng or random.Random()
        self.sleep = sleep
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, turns: list, **params) -> str:
        payload = {"model": self.model,
                   "messages": [t.to_wire() for t in turns]}
        payload.update(params)
        url = f"{self.endpoint}/v1/chat/completions"
        last_error = None
        for attempt in range(self.max_attempts):
            if attempt:
                delay = self.backoff * (2 ** (attempt - 1))
                self.sleep(delay * (1.0 + 0.25 * self.rng.random()))
            try:
                resp = self.session.post(url, json=payload,
                                         headers=self._headers(),
                                         timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = f"transport failure: {exc}"
                continue
            if resp.status_code >= 500:
                last_error = f"server error {resp.status_code}"
                continue
            if resp.status_code >= 400:
                body = resp.text[:500].lower()
                if resp.status_code == 413 or "context" in body or "token" in body:
                    raise ContextOverflow(
                        f"endpoint rejected request: {resp.status_code}")
                raise EndpointError(
                    f"endpoint error {resp.status_code}: {resp.text[:200]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError) as exc:
                raise EndpointError(f"malformed endpoint response: {exc}") from exc
            if not isinstance(content, str):
                raise EndpointError("non-text content in endpoint response")
            return content
        raise EndpointError(
            f"request failed after {self.max_attempts} attempts: {last_error}")


class AnnotationSession:
    """Dialogue state for one sample: history grows by 2 turns per request."""

    def __init__(self, client: ChatClient, sample_id: str,
                 templates: dict | None = None,
                 step_cap: int = STEP_TEXT_CAP):
        self.client = client
        self.sample_id = sample_id
        self.templates = templates or load_templates()
        self.step_cap = step_cap
        self.flags: list = []
        self.history: list = [DialogueTurn("system", self.templates["system"])]

    def _exchange(self, turn: DialogueTurn) -> str:
        history_chars = sum(len(t.text) for t in self.history) + len(turn.text)
        if history_chars > MAX_HISTORY_CHARS:
            raise ContextOverflow(
                f"history at {history_chars} chars exceeds the local guard")
        reply = self.client.complete(self.history + [turn]).strip()
        if not reply:
            raise EmptyResponse(f"empty response for sample {self.sample_id}")
        self.history.append(turn)
        self.history.append(DialogueTurn("assistant", reply))
        return reply

    def describe_global(self, final_image: np.ndarray) -> str:
        """Single-turn request with the final frame; returns t_g."""
        turn = DialogueTurn("user", self.templates["global"],
                            images=[raster.png_bytes(final_image)])
        return self._exchange(turn)

    def describe_step(self, index: int, current: np.ndarray,
                      previous: np.ndarray, final: np.ndarray) -> str:
        """Transition request carrying exactly (I_current, I_previous, I_final)."""
        turn = DialogueTurn(
            "user", self.templates["step"].format(index=index),
            images=[raster.png_bytes(current), raster.png_bytes(previous),
                    raster.png_bytes(final)])
        text = self._exchange(turn)
        if len(text) > self.step_cap:
            text = text[:self.step_cap - len(TRUNCATION_MARKER)] + TRUNCATION_MARKER
            self.flags.append(f"step_{index}_truncated")
        return text


def annotate_sample(sample_id: str, frames: list, client: ChatClient,
                    templates: dict | None = None,
                    step_cap: int = STEP_TEXT_CAP) -> AnnotationRecord:
    """Run the full dialogue for one sample over its prefix frames I_1..I_n."""
    if not frames:
        raise EmptyResponse(f"sample {sample_id} has no frames")
    session = AnnotationSession(client, sample_id, templates=templates,
                                step_cap=step_cap)
    t_g = session.describe_global(frames[-1])
    steps = []
    for i in range(1, len(frames)):
        text = session.describe_step(i, current=frames[i],
                                     previous=frames[i - 1], final=frames[-1])
        steps.append(StepText(i, text))
    return AnnotationRecord(
        sample_id=sample_id, t_g=t_g, steps=steps, flags=session.flags,
        metadata={
            "transition_convention": "step i describes frame i -> frame i+1",
            "template_hashes": template_hashes(session.templates),
        })


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------

def cosine(a, b) -> float:
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cannot take cosine of a zero vector")
    return float(va @ vb / (na * nb))


def filter_record(rec: AnnotationRecord, final_image: np.ndarray,
                  image_embed: Callable, text_embed: Callable,
                  lm_scorer: Callable,
                  clip_threshold: float = DEFAULT_CLIP_THRESHOLD,
                  ppl_threshold: float = DEFAULT_PPL_THRESHOLD,
                  ppl_all_steps: bool = False) -> AnnotationRecord:
    """Score and gate an annotation; returns the record filled in.

    clip_score = cosine(image embedding of I_n, text embedding of t_g).
    perplexity = exp(mean token NLL) of t_g; with ppl_all_steps the worst
    (highest) perplexity across t_g and all step texts is used.
    accepted is a pure function of the two scores and thresholds.
    """
    try:
        img_vec = image_embed(final_image)
        txt_vec = text_embed(rec.t_g)
        texts = [rec.t_g] + ([t for _i, t in rec.steps] if ppl_all_steps else [])
        ppls = [dataset_mod.perplexity(lm_scorer(text)) for text in texts]
    except (EndpointError, requests.RequestException) as exc:
        raise ProviderError(f"embedding/scoring provider failed: {exc}") from exc
    rec.clip_score = cosine(img_vec, txt_vec)
    rec.perplexity = max(ppls)
    rec.accepted = bool(rec.clip_score >= clip_threshold
                        and rec.perplexity <= ppl_threshold)
    rec.metadata["clip_threshold"] = clip_threshold
    rec.metadata["ppl_threshold"] = ppl_threshold
    rec.metadata["ppl_all_steps"] = ppl_all_steps
    return rec


# ---------------------------------------------------------------------------
# HTTP providers (shaped for the model-services component)
# ---------------------------------------------------------------------------

class ServiceClient:
    """Providers backed by the embedding/scoring HTTP service."""

    def __init__(self, embed_endpoint: str, score_endpoint: str | None = None,
                 api_key: str = "", timeout: float = 60.0,
                 session: requests.Session | None = None):
        self.embed_endpoint = embed_endpoint.rstrip("/")
        self.score_endpoint = (score_endpoint or embed_endpoint).rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()

    def _post(self, base: str, path: str, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self.session.post(f"{base}{path}", json=payload,
                                     headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderError(f"provider transport failure: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(
                f"provider error {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def embed_image(self, image: np.ndarray) -> list:
        png = raster.png_bytes(image)
        payload = {"image_b64": base64.b64encode(png).decode("ascii")}
        return self._post(self.embed_endpoint, "/embed/image", payload)["embedding"]

    def embed_text(self, text: str) -> list:
        return self._post(self.embed_endpoint, "/embed/text",
                          {"text": text})["embedding"]

    def score_text(self, text: str) -> list:
        return self._post(self.score_endpoint, "/score",
                          {"text": text})["token_nlls"]
