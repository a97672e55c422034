"""Training-sample assembly and dataset files.

A sample pairs an instruction prompt with an assistant answer laid out as
think-trace first, SVG code second, so an autoregressive learner conditions
the code on the full trace. Chat rendering is a strict grammar:

    <think>\n
    Step 1: ...\n
    ...\n
    </think>\n
    <svg ...>...</svg>

Step texts are escaped at assembly (think delimiters entity-escaped, inner
newlines collapsed) so the grammar parses back unambiguously; parse_chat
recovers the assembled fields byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from dataclasses import dataclass, field

from . import core, reconstruct
from .errors import (
    DimensionMismatch,
    EmptyInput,
    InsufficientSamples,
    LengthOverflow,
    NonFiniteInput,
    RejectedRecord,
)

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

SYSTEM_PROMPT = ("You draw vector graphics. Plan the image step by step "
                 "inside thinking delimiters, then output the complete SVG code.")
INSTRUCTION_TEMPLATE = "Generate an SVG matching this description: {t_g}"

MAX_CHAT_CHARS = 16384


def template_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def escape_text(text: str) -> str:
    """Make free text safe inside the chat grammar; reversible via unescape_text."""
    text = text.replace("&", "&amp;")
    text = text.replace(THINK_OPEN, "&lt;think&gt;")
    text = text.replace(THINK_CLOSE, "&lt;/think&gt;")
    # One step per line: fold internal line breaks into single spaces.
    text = re.sub(r"\s*\n\s*", " ", text).strip()
    return text


def unescape_text(text: str) -> str:
    text = text.replace("&lt;/think&gt;", THINK_CLOSE)
    text = text.replace("&lt;think&gt;", THINK_OPEN)
    return text.replace("&amp;", "&")


@dataclass
class TrainingSample:
    sample_id: str
    prompt: str
    think_trace: list          # step texts t_1..t_{n-1}, already escaped
    svg_code: str              # canonical serialization of the reconstructed doc
    metadata: dict = field(default_factory=dict)


@dataclass
class ChatRecord:
    messages: list             # [{"role": ..., "content": ...}, ...]
    sample_id: str = ""


def assemble(rec, seq: reconstruct.StepSequence, doc: core.SvgDocument,
             clip_threshold: float = 0.22, ppl_threshold: float = 40.0,
             template_hashes: dict | None = None,
             max_chars: int = MAX_CHAT_CHARS) -> TrainingSample:
    """Build a TrainingSample from an accepted annotation and its steps.

    The SVG target is the reconstructed document (all steps combined), so the
    code text lists s_1..s_n in paint order. Raises RejectedRecord for
    unaccepted records, DimensionMismatch when the trace length is not n-1,
    and LengthOverflow when the rendered chat would exceed the budget.
    """
    if not getattr(rec, "accepted", False):
        raise RejectedRecord(f"annotation {rec.sample_id} was not accepted")
    step_texts = [text for _i, text in rec.steps]
    if len(step_texts) != seq.n - 1:
        raise DimensionMismatch(
            f"trace length {len(step_texts)} != n-1 = {seq.n - 1}")
    svg_code = core.serialize(reconstruct.combine_steps(seq)).decode("utf-8")
    prompt = INSTRUCTION_TEMPLATE.format(t_g=escape_text(rec.t_g))
    trace = [escape_text(t) for t in step_texts]
    hashes = dict(template_hashes or {})
    hashes.setdefault("system", template_hash(SYSTEM_PROMPT))
    hashes.setdefault("instruction", template_hash(INSTRUCTION_TEMPLATE))
    sample = TrainingSample(
        sample_id=rec.sample_id,
        prompt=prompt,
        think_trace=trace,
        svg_code=svg_code,
        metadata={
            "clip_threshold": clip_threshold,
            "ppl_threshold": ppl_threshold,
            "clip_score": getattr(rec, "clip_score", None),
            "perplexity": getattr(rec, "perplexity", None),
            "template_hashes": hashes,
            "primitive_count": seq.n,
            "byte_length": len(svg_code.encode("utf-8")),
        },
    )
    rendered = assistant_content(sample)
    total = len(SYSTEM_PROMPT) + len(prompt) + len(rendered)
    if total > max_chars:
        raise LengthOverflow(f"chat record is {total} chars, budget {max_chars}")
    return sample


def assistant_content(sample: TrainingSample) -> str:
    lines = "".join(f"Step {i}: {text}\n"
                    for i, text in enumerate(sample.think_trace, start=1))
    return f"{THINK_OPEN}\n{lines}{THINK_CLOSE}\n{sample.svg_code}"


def to_chat(sample: TrainingSample) -> ChatRecord:
    """Deterministic chat rendering of a sample."""
    return ChatRecord(
        sample_id=sample.sample_id,
        messages=[
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": sample.prompt},
            {"role": "assistant", "content": assistant_content(sample)},
        ],
    )


_STEP_LINE = re.compile(r"^Step (\d+): (.*)$")


def parse_assistant(content: str) -> tuple:
    """Split assistant text into (think_trace, svg_code) per the grammar.

    Raises ValueError with a stable message prefix on malformed input:
    'no think block' or 'bad trace line'.
    """
    if not content.startswith(THINK_OPEN + "\n"):
        raise ValueError("no think block: missing opening delimiter")
    # The empty trace "<think>\n</think>\n" matches too: the opening line's
    # newline doubles as the one preceding the closing delimiter.
    close_at = content.find("\n" + THINK_CLOSE + "\n")
    if close_at < 0:
        raise ValueError("no think block: missing closing delimiter")
    body = content[len(THINK_OPEN) + 1:max(close_at, len(THINK_OPEN) + 1)]
    rest = content[close_at + 1 + len(THINK_CLOSE) + 1:]
    if THINK_OPEN in body or THINK_CLOSE in body \
            or THINK_OPEN in rest or THINK_CLOSE in rest:
        raise ValueError("no think block: stray delimiter")
    trace = []
    if body:
        for line in body.split("\n"):
            m = _STEP_LINE.match(line)
            if not m or int(m.group(1)) != len(trace) + 1:
                raise ValueError(f"bad trace line: {line!r}")
            trace.append(m.group(2))
    return trace, rest


def parse_chat(chat) -> TrainingSample:
    """Invert to_chat; the round trip is exact including escaping."""
    messages = chat["messages"] if isinstance(chat, dict) else chat.messages
    sample_id = (chat.get("sample_id", "") if isinstance(chat, dict)
                 else chat.sample_id)
    roles = [m["role"] for m in messages]
    if roles != ["system", "user", "assistant"]:
        raise ValueError(f"unexpected message roles {roles}")
    prompt = messages[1]["content"]
    trace, svg_code = parse_assistant(messages[2]["content"])
    return TrainingSample(sample_id=sample_id, prompt=prompt,
                          think_trace=trace, svg_code=svg_code)


# ---------------------------------------------------------------------------
# NLL utilities
# ---------------------------------------------------------------------------

def _check_nlls(token_nlls) -> list:
    vals = list(token_nlls)
    for v in vals:
        if not math.isfinite(v) or v < 0:
            raise NonFiniteInput(f"token NLL must be finite and >= 0, got {v!r}")
    return vals


def sequence_nll(token_nlls) -> float:
    """Total negative log-likelihood: sum of per-token NLLs.

    Empty input returns 0 by convention. Compensated summation keeps the
    additivity property nll(a ++ b) == nll(a) + nll(b) tight.
    """
    return math.fsum(_check_nlls(token_nlls))


def mean_nll(token_nlls) -> float:
    vals = _check_nlls(token_nlls)
    if not vals:
        raise EmptyInput("mean NLL of an empty sequence is undefined")
    return math.fsum(vals) / len(vals)


def perplexity(token_nlls) -> float:
    return math.exp(mean_nll(token_nlls))


# ---------------------------------------------------------------------------
# Splitting and files
# ---------------------------------------------------------------------------

def split_dataset(samples: list, test_count: int, rng_seed: int) -> tuple:
    """Deterministic disjoint (train, test) split.

    Samples are ordered by sample_id before the seeded shuffle, so the split
    depends only on the id set and the seed, not on input order.
    """
    if test_count < 0:
        raise InsufficientSamples(f"negative test_count {test_count}")
    if test_count >= len(samples):
        raise InsufficientSamples(
            f"test_count {test_count} needs > {test_count} samples, "
            f"got {len(samples)}")
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample_id in split input")
    ordered = sorted(samples, key=lambda s: s.sample_id)
    rng = random.Random(rng_seed)
    rng.shuffle(ordered)
    return ordered[test_count:], ordered[:test_count]


def chat_to_json_line(chat: ChatRecord) -> str:
    payload = {"sample_id": chat.sample_id, "messages": chat.messages}
    return json.dumps(payload, ensure_ascii=False, sort_keys=True,
                      separators=(",", ":"))


def write_jsonl(samples: list, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(chat_to_json_line(to_chat(sample)) + "\n")


def read_jsonl(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(parse_chat(json.loads(line)))
    return out


def write_manifest(path, *, train_count: int, test_count: int,
                   clip_threshold: float, ppl_threshold: float,
                   rng_seed: int, template_hashes: dict) -> None:
    payload = {
        "train_count": train_count,
        "test_count": test_count,
        "clip_threshold": clip_threshold,
        "ppl_threshold": ppl_threshold,
        "rng_seed": rng_seed,
        "template_hashes": template_hashes,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
