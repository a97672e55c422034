"""Generation client: sampling configs, response parsing, prompt editing.

Model misbehavior never raises: parse or render failures land in
GenerationResult.failure_reason (NoThinkBlock, UnparseableSvg, RenderError).
Only transport-level problems surface as EndpointError.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import core, dataset, raster
from .annotate import ChatClient, DialogueTurn
from .errors import AllInvalid, AmbiguousSpan, SvgPipeError

NO_THINK_BLOCK = "NoThinkBlock"
UNPARSEABLE_SVG = "UnparseableSvg"
RENDER_ERROR = "RenderError"


@dataclass(frozen=True)
class SamplingConfig:
    mode: str = "greedy"               # greedy | nucleus
    top_p: Optional[float] = None
    temperature: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("greedy", "nucleus"):
            raise ValueError(f"unknown sampling mode: {self.mode!r}")
        if self.mode == "nucleus":
            if self.top_p is None or not (0.0 < self.top_p <= 1.0):
                raise ValueError(f"nucleus sampling needs top_p in (0,1], got {self.top_p}")
            if self.temperature is None or self.temperature <= 0.0:
                raise ValueError(f"nucleus sampling needs temperature > 0, got {self.temperature}")

    def to_params(self) -> dict:
        if self.mode == "greedy":
            return {"temperature": 0.0}
        return {"top_p": self.top_p, "temperature": self.temperature}


@dataclass
class GenerationResult:
    prompt: str
    think_trace: list = field(default_factory=list)
    svg_code: str = ""
    valid: bool = False
    render: Optional[np.ndarray] = None
    failure_reason: Optional[str] = None
    raw_response: str = ""


def _salvage_svg(text: str) -> Optional[str]:
    """One repair pass: crop to the svg element, append a missing close tag."""
    start = text.find("<svg")
    if start < 0:
        return None
    end = text.rfind("</svg>")
    if end >= 0:
        return text[start:end + len("</svg>")]
    return text[start:] + "</svg>"


def generate(prompt: str, cfg: SamplingConfig, client: ChatClient,
             size: int = 512) -> GenerationResult:
    """One generation round; parses with the training-time chat grammar."""
    if not prompt:
        raise ValueError("empty prompt")
    turns = [
        DialogueTurn("system", dataset.SYSTEM_PROMPT),
        DialogueTurn("user", dataset.INSTRUCTION_TEMPLATE.format(t_g=prompt)),
    ]
    content = client.complete(turns, **cfg.to_params())
    result = GenerationResult(prompt=prompt, raw_response=content)
    try:
        trace, svg_text = dataset.parse_assistant(content)
    except ValueError:
        result.failure_reason = NO_THINK_BLOCK
        return result
    result.think_trace = trace
    svg_text = svg_text.strip()

    doc = None
    for candidate in (svg_text, _salvage_svg(svg_text)):
        if candidate is None:
            continue
        try:
            doc = core.parse_svg(candidate)
            result.svg_code = candidate
            break
        except SvgPipeError:
            continue
    if doc is None:
        result.failure_reason = UNPARSEABLE_SVG
        return result
    try:
        result.render = raster.render(doc, size)
    except SvgPipeError:
        result.failure_reason = RENDER_ERROR
        return result
    result.valid = True
    return result


def best_of(prompt: str, cfg: SamplingConfig, k: int, scorer: Callable,
            client: ChatClient, size: int = 512,
            max_inflight: int = 4) -> GenerationResult:
    """k nucleus rounds; return the valid candidate with the best clip score.

    scorer(render, prompt) -> float. Ties break toward the lowest index, so
    selection is deterministic for a fixed endpoint.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if cfg.mode != "nucleus":
        raise ValueError("best_of requires nucleus sampling")
    if k == 1:
        result = generate(prompt, cfg, client, size=size)
        if not result.valid:
            raise AllInvalid("the single candidate failed validation")
        return result
    with ThreadPoolExecutor(max_workers=min(k, max_inflight)) as pool:
        results = list(pool.map(
            lambda _i: generate(prompt, cfg, client, size=size), range(k)))
    best = None
    best_score = None
    for result in results:
        if not result.valid:
            continue
        score = scorer(result.render, prompt)
        if best_score is None or score > best_score:
            best, best_score = result, score
    if best is None:
        raise AllInvalid(f"all {k} candidates failed validation")
    return best


def edit_prompt(base_prompt: str, span_replacements: list) -> str:
    """Sequential exact single-occurrence replacements (prompt-side editing)."""
    text = base_prompt
    for old, new in span_replacements:
        count = text.count(old)
        if count != 1:
            raise AmbiguousSpan(old, count)
        text = text.replace(old, new)
    return text


def save_generation(result: GenerationResult, directory, gen_id: str) -> None:
    """Write generations/{id}.json plus the rendered PNG when valid."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "id": gen_id,
        "prompt": result.prompt,
        "think_trace": result.think_trace,
        "svg_code": result.svg_code,
        "valid": result.valid,
        "failure_reason": result.failure_reason,
    }
    (directory / f"{gen_id}.json").write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    if result.render is not None:
        raster.save_png(result.render, directory / f"{gen_id}.png")
