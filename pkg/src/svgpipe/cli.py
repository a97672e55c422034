"""Batch pipeline orchestrator.

Subcommands (run in order)::

    svgpipe ingest    raw SVG corpus -> curated canonical SVGs
    svgpipe render    curated SVGs -> per-step frames, masks, diff records
    svgpipe annotate  frames -> per-sample annotation records (remote VLM)
    svgpipe assemble  annotations -> train/test chat JSONL dataset
    svgpipe evaluate  feature files / SVG dirs -> metrics report
    svgpipe generate  prompt file -> generated SVGs + renders

Every stage is resumable: completed per-sample outputs are detected and
skipped, per-sample rejections are persisted, and re-running a stage on an
unchanged corpus reproduces byte-identical data outputs and identical
manifest counters.  Configuration comes from a plain ``key=value`` file,
overridable by environment variables and command-line flags.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import datetime as _dt
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import annotate as annotate_mod
from . import core, dataset, inference, metrics, raster, reconstruct
from .errors import (
    EmptyCorpus,
    InsufficientSamples,
    LengthOverflow,
    StageError,
    SvgPipeError,
)

# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_DEFAULTS: dict[str, Any] = {
    "corpus_dir": "corpus",
    "output_dir": "out",
    "canvas_size": 512,
    "length_cutoff": 8192,
    "clip_threshold": annotate_mod.DEFAULT_CLIP_THRESHOLD,
    "ppl_threshold": annotate_mod.DEFAULT_PPL_THRESHOLD,
    "ppl_all_steps": False,
    "max_inflight": 4,
    "rng_seed": 0,
    "test_count": 1000,
    "skip_filter": False,
    "annotator_endpoint": "",
    "annotator_api_key": "",
    "annotator_model": "default",
    "embed_endpoint": "",
    "score_endpoint": "",
    "gen_endpoint": "",
    "gen_api_key": "",
    "gen_model": "default",
    "sampling_mode": "greedy",
    "top_p": 0.8,
    "temperature": 1.0,
    "best_of_k": 1,
    "prompts_file": "",
    "real_features": "",
    "gen_features": "",
    "clip_real_features": "",
    "clip_gen_features": "",
    "clip_image_features": "",
    "clip_text_features": "",
    "stats_svg_dir": "",
}

# Credentials and service endpoints honour their conventional variable names;
# every other key can be forced with SVGPIPE_<KEY>.
_ENV_ALIASES: dict[str, str] = {
    "annotator_endpoint": "ANNOTATOR_ENDPOINT",
    "annotator_api_key": "ANNOTATOR_API_KEY",
    "embed_endpoint": "EMBED_ENDPOINT",
    "score_endpoint": "SCORE_ENDPOINT",
    "gen_endpoint": "GEN_ENDPOINT",
    "gen_api_key": "GEN_API_KEY",
}

_SECRET_KEYS = {"annotator_api_key", "gen_api_key"}


def _coerce(key: str, raw: str) -> Any:
    """Convert a string override to the declared type of the config key."""
    default = _DEFAULTS[key]
    if isinstance(default, bool):
        lowered = raw.strip().lower()
        if lowered in {"1", "true", "yes", "on"}:
            return True
        if lowered in {"0", "false", "no", "off"}:
            return False
        raise StageError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise StageError(f"config key {key!r}: expected an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise StageError(f"config key {key!r}: expected a number, got {raw!r}") from exc
    return raw


def parse_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a plain ``key=value`` config file.

    Blank lines and lines starting with ``#`` are ignored.  Unknown keys are
    an error so typos do not silently fall back to defaults.
    """
    values: dict[str, Any] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise StageError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _DEFAULTS:
            raise StageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return values


@dataclass(frozen=True)
class PipelineConfig:
    """Effective pipeline configuration after all override layers."""

    corpus_dir: str = _DEFAULTS["corpus_dir"]
    output_dir: str = _DEFAULTS["output_dir"]
    canvas_size: int = _DEFAULTS["canvas_size"]
    length_cutoff: int = _DEFAULTS["length_cutoff"]
    clip_threshold: float = _DEFAULTS["clip_threshold"]
    ppl_threshold: float = _DEFAULTS["ppl_threshold"]
    ppl_all_steps: bool = _DEFAULTS["ppl_all_steps"]
    max_inflight: int = _DEFAULTS["max_inflight"]
    rng_seed: int = _DEFAULTS["rng_seed"]
    test_count: int = _DEFAULTS["test_count"]
    skip_filter: bool = _DEFAULTS["skip_filter"]
    annotator_endpoint: str = ""
    annotator_api_key: str = ""
    annotator_model: str = _DEFAULTS["annotator_model"]
    embed_endpoint: str = ""
    score_endpoint: str = ""
    gen_endpoint: str = ""
    gen_api_key: str = ""
    gen_model: str = _DEFAULTS["gen_model"]
    sampling_mode: str = _DEFAULTS["sampling_mode"]
    top_p: float = _DEFAULTS["top_p"]
    temperature: float = _DEFAULTS["temperature"]
    best_of_k: int = _DEFAULTS["best_of_k"]
    prompts_file: str = ""
    real_features: str = ""
    gen_features: str = ""
    clip_real_features: str = ""
    clip_gen_features: str = ""
    clip_image_features: str = ""
    clip_text_features: str = ""
    stats_svg_dir: str = ""

    @classmethod
    def load(
        cls,
        config_file: str | Path | None = None,
        env: Mapping[str, str] | None = None,
        overrides: Mapping[str, Any] | None = None,
    ) -> "PipelineConfig":
        """Resolve configuration: defaults < file < environment < overrides."""
        env = os.environ if env is None else env
        values = dict(_DEFAULTS)
        if config_file is not None:
            values.update(parse_config_file(config_file))
        for key in _DEFAULTS:
            candidates = [f"SVGPIPE_{key.upper()}"]
            if key in _ENV_ALIASES:
                candidates.append(_ENV_ALIASES[key])
            for name in candidates:
                if name in env:
                    values[key] = _coerce(key, env[name])
        for key, value in (overrides or {}).items():
            if key not in _DEFAULTS:
                raise StageError(f"unknown config key {key!r}")
            if value is not None:
                values[key] = _coerce(key, value) if isinstance(value, str) else value
        return cls(**values)

    def snapshot(self) -> dict[str, Any]:
        """Config as a JSON-safe dict with secrets redacted."""
        data = dataclasses.asdict(self)
        for key in _SECRET_KEYS:
            if data.get(key):
                data[key] = "<redacted>"
        return data


# ---------------------------------------------------------------------------
# Run manifests
# ---------------------------------------------------------------------------


def _utcnow() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


@dataclass
class RunManifest:
    """Provenance record written by every stage run.

    ``counters`` holds stage totals; ``rejected`` maps rejection reason (the
    error class name) to count.  For stages with per-sample inputs the
    invariant ``inputs == accepted + sum(rejected.values())`` always holds,
    so no sample can silently vanish.
    """

    stage: str
    run_id: str
    started_at: str
    finished_at: str = ""
    counters: dict[str, int] = field(default_factory=dict)
    rejected: dict[str, int] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    template_hashes: dict[str, str] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    @classmethod
    def start(cls, stage: str, config: PipelineConfig) -> "RunManifest":
        snapshot = config.snapshot()
        digest = hashlib.sha256(
            json.dumps(snapshot, sort_keys=True).encode("utf-8")
        ).hexdigest()[:8]
        return cls(
            stage=stage,
            run_id=f"{stage}-{digest}",
            started_at=_utcnow(),
            config=snapshot,
            template_hashes=dict(annotate_mod.template_hashes()),
        )

    def reject(self, reason: str) -> None:
        self.rejected[reason] = self.rejected.get(reason, 0) + 1

    def reconcile(self, inputs_key: str, accepted_key: str) -> None:
        total = self.counters.get(accepted_key, 0) + sum(self.rejected.values())
        if self.counters.get(inputs_key, 0) != total:
            raise StageError(
                f"{self.stage}: counter mismatch: {inputs_key}="
                f"{self.counters.get(inputs_key, 0)} but "
                f"{accepted_key}+rejected={total}"
            )

    def finish(self) -> "RunManifest":
        self.finished_at = _utcnow()
        return self

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    def write(self, output_dir: str | Path) -> Path:
        path = Path(output_dir) / "manifests" / f"{self.stage}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def sample_id_for(canonical: bytes) -> str:
    """Stable sample identifier: first 16 hex digits of the content hash."""
    return hashlib.sha256(canonical).hexdigest()[:16]


def _write_if_changed(path: Path, data: bytes) -> None:
    """Write ``data`` unless the file already holds exactly those bytes.

    Keeps re-runs byte-identical and avoids touching mtimes needlessly.
    """
    if path.exists() and path.read_bytes() == data:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def _load_rejects(output_dir: Path, stage: str) -> dict[str, str]:
    path = output_dir / "rejects" / f"{stage}.json"
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def _save_rejects(output_dir: Path, stage: str, rejects: dict[str, str]) -> None:
    path = output_dir / "rejects" / f"{stage}.json"
    payload = json.dumps(rejects, indent=2, sort_keys=True) + "\n"
    _write_if_changed(path, payload.encode("utf-8"))


def _curated_dir(config: PipelineConfig) -> Path:
    return Path(config.output_dir) / "curated"


def _renders_dir(config: PipelineConfig) -> Path:
    return Path(config.output_dir) / "renders"


def _annotations_dir(config: PipelineConfig) -> Path:
    return Path(config.output_dir) / "annotations"


def _dataset_dir(config: PipelineConfig) -> Path:
    return Path(config.output_dir) / "dataset"


def _generations_dir(config: PipelineConfig) -> Path:
    return Path(config.output_dir) / "generations"


def _curated_ids(config: PipelineConfig) -> list[str]:
    directory = _curated_dir(config)
    if not directory.is_dir():
        return []
    return sorted(p.stem for p in directory.glob("*.svg"))


# ---------------------------------------------------------------------------
# Stage: ingest
# ---------------------------------------------------------------------------


def cmd_ingest(config: PipelineConfig) -> RunManifest:
    """Parse, normalize, and canonicalize every SVG in the corpus.

    Oversized or malformed inputs are rejected with the error class name as
    the reason; identical canonical bytes from different source files are
    deduplicated.  Output: ``curated/{sample_id}.svg`` plus an index mapping
    source names to sample ids.
    """
    manifest = RunManifest.start("ingest", config)
    corpus = Path(config.corpus_dir)
    sources = sorted(corpus.glob("*.svg")) if corpus.is_dir() else []
    if not sources:
        raise EmptyCorpus(f"no .svg files found in {config.corpus_dir!r}")

    out = Path(config.output_dir)
    curated = _curated_dir(config)
    curated.mkdir(parents=True, exist_ok=True)
    rejects: dict[str, str] = {}
    index: dict[str, str] = {}
    seen: dict[str, str] = {}
    duplicates = 0

    for src in sources:
        try:
            doc = core.parse_svg(src.read_bytes())
            doc = core.normalize(doc)
            canonical = core.serialize(doc)
            if len(canonical) > config.length_cutoff:
                raise LengthOverflow(
                    f"{src.name}: {len(canonical)} bytes exceeds cutoff "
                    f"{config.length_cutoff}"
                )
        except SvgPipeError as exc:
            reason = type(exc).__name__
            rejects[src.name] = reason
            manifest.reject(reason)
            continue
        sid = sample_id_for(canonical)
        if sid in seen:
            duplicates += 1
            index[src.name] = sid
            continue
        seen[sid] = src.name
        _write_if_changed(curated / f"{sid}.svg", canonical)
        index[src.name] = sid

    _save_rejects(out, "ingest", rejects)
    index_payload = json.dumps(index, indent=2, sort_keys=True) + "\n"
    _write_if_changed(curated / "index.json", index_payload.encode("utf-8"))

    manifest.counters["ingested"] = len(sources)
    manifest.counters["accepted"] = len(seen)
    manifest.counters["duplicates"] = duplicates
    total = len(seen) + duplicates + sum(manifest.rejected.values())
    if total != len(sources):
        raise StageError(f"ingest: counter mismatch: {len(sources)} != {total}")
    manifest.finish().write(out)
    return manifest


# ---------------------------------------------------------------------------
# Stage: render
# ---------------------------------------------------------------------------


def _render_one(config: PipelineConfig, sid: str) -> None:
    """Flatten one curated SVG and write frames, masks, and diff records."""
    curated = _curated_dir(config) / f"{sid}.svg"
    doc = core.parse_svg(curated.read_bytes())
    seq = reconstruct.flatten(doc)
    seq = reconstruct.prune_invisible(seq, size=config.canvas_size)
    step_docs = [step.doc for step in seq.steps]
    images, diffs = raster.render_prefixes(
        step_docs, size=config.canvas_size, check_locality=True
    )

    sample_dir = _renders_dir(config) / sid
    sample_dir.mkdir(parents=True, exist_ok=True)
    for i, image in enumerate(images, start=1):
        _write_if_changed(sample_dir / f"step_{i:04d}.png", raster.png_bytes(image))
    for diff in diffs:
        mask_png = raster.mask_png_bytes(diff.coverage_mask)
        _write_if_changed(sample_dir / f"mask_{diff.step_index:04d}.png", mask_png)

    steps_payload = {
        "sample_id": sid,
        "n": seq.n,
        "fragments": [step.fragment for step in seq.steps],
    }
    steps_json = json.dumps(steps_payload, indent=2, sort_keys=True) + "\n"
    _write_if_changed(sample_dir / "steps.json", steps_json.encode("utf-8"))
    diffs_json = raster.diffs_to_json(diffs) + "\n"
    # diffs.json is written last: its presence marks the sample complete.
    _write_if_changed(sample_dir / "diffs.json", diffs_json.encode("utf-8"))


def cmd_render(config: PipelineConfig) -> RunManifest:
    """Render incremental prefixes for every curated sample.

    Samples whose ``diffs.json`` already exists are skipped, making the
    stage resumable after interruption.
    """
    manifest = RunManifest.start("render", config)
    ids = _curated_ids(config)
    if not ids:
        raise StageError("render: no curated samples; run ingest first")

    out = Path(config.output_dir)
    rejects = _load_rejects(out, "render")
    rendered = 0
    skipped = 0
    for sid in ids:
        if (_renders_dir(config) / sid / "diffs.json").exists():
            rendered += 1
            skipped += 1
            continue
        if sid in rejects:
            manifest.reject(rejects[sid])
            continue
        try:
            _render_one(config, sid)
            rendered += 1
        except SvgPipeError as exc:
            reason = type(exc).__name__
            rejects[sid] = reason
            manifest.reject(reason)

    _save_rejects(out, "render", rejects)
    manifest.counters["inputs"] = len(ids)
    manifest.counters["rendered"] = rendered
    manifest.counters["skipped_existing"] = skipped
    manifest.reconcile("inputs", "rendered")
    manifest.finish().write(out)
    return manifest


# ---------------------------------------------------------------------------
# Stage: annotate
# ---------------------------------------------------------------------------


def _load_frames(config: PipelineConfig, sid: str):
    sample_dir = _renders_dir(config) / sid
    paths = sorted(sample_dir.glob("step_*.png"))
    return [raster.load_png(p) for p in paths]


def _annotate_one(config: PipelineConfig, sid: str) -> annotate_mod.AnnotationRecord:
    frames = _load_frames(config, sid)
    client = annotate_mod.ChatClient(
        endpoint=config.annotator_endpoint,
        api_key=config.annotator_api_key,
        model=config.annotator_model,
    )
    record = annotate_mod.annotate_sample(sid, frames, client)
    if config.skip_filter:
        return dataclasses.replace(
            record, accepted=True, flags=record.flags + ["unfiltered"]
        )
    service = annotate_mod.ServiceClient(
        embed_endpoint=config.embed_endpoint,
        score_endpoint=config.score_endpoint,
    )
    return annotate_mod.filter_record(
        record,
        final_image=frames[-1],
        image_embed=service.embed_image,
        text_embed=service.embed_text,
        lm_scorer=service.score_text,
        clip_threshold=config.clip_threshold,
        ppl_threshold=config.ppl_threshold,
        ppl_all_steps=config.ppl_all_steps,
    )


def cmd_annotate(config: PipelineConfig) -> RunManifest:
    """Annotate every rendered sample via the remote multimodal endpoint.

    Up to ``max_inflight`` samples are annotated concurrently.  Existing
    annotation records are kept as-is, so interrupted runs resume where
    they stopped.
    """
    manifest = RunManifest.start("annotate", config)
    if not config.annotator_endpoint:
        raise StageError("annotate: annotator_endpoint is not configured "
                         "(set ANNOTATOR_ENDPOINT)")
    if not config.skip_filter and not (config.embed_endpoint and config.score_endpoint):
        raise StageError("annotate: embed_endpoint/score_endpoint are not configured "
                         "(set EMBED_ENDPOINT and SCORE_ENDPOINT, or skip_filter=true)")
    rendered = sorted(
        p.parent.name
        for p in _renders_dir(config).glob("*/diffs.json")
    ) if _renders_dir(config).is_dir() else []
    if not rendered:
        raise StageError("annotate: no rendered samples; run render first")

    out = Path(config.output_dir)
    ann_dir = _annotations_dir(config)
    ann_dir.mkdir(parents=True, exist_ok=True)
    rejects = _load_rejects(out, "annotate")

    pending = []
    annotated = 0
    skipped = 0
    for sid in rendered:
        if (ann_dir / f"{sid}.json").exists():
            annotated += 1
            skipped += 1
        elif sid in rejects:
            manifest.reject(rejects[sid])
        else:
            pending.append(sid)

    def work(sid: str) -> tuple[str, annotate_mod.AnnotationRecord | None, str | None]:
        try:
            return sid, _annotate_one(config, sid), None
        except SvgPipeError as exc:
            return sid, None, type(exc).__name__

    workers = max(1, config.max_inflight)
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        for sid, record, reason in pool.map(work, pending):
            if record is None:
                rejects[sid] = reason
                manifest.reject(reason)
                continue
            payload = record.to_json() + "\n"
            _write_if_changed(ann_dir / f"{sid}.json", payload.encode("utf-8"))
            annotated += 1

    _save_rejects(out, "annotate", rejects)
    manifest.counters["inputs"] = len(rendered)
    manifest.counters["annotated"] = annotated
    manifest.counters["skipped_existing"] = skipped
    manifest.reconcile("inputs", "annotated")
    manifest.finish().write(out)
    return manifest


# ---------------------------------------------------------------------------
# Stage: assemble
# ---------------------------------------------------------------------------


def _load_sequence(config: PipelineConfig, sid: str) -> reconstruct.StepSequence:
    """Rebuild the step sequence for a sample from its persisted fragments."""
    steps_path = _renders_dir(config) / sid / "steps.json"
    payload = json.loads(steps_path.read_text(encoding="utf-8"))
    steps = []
    for i, fragment in enumerate(payload["fragments"], start=1):
        doc = core.parse_svg(fragment.encode("utf-8"))
        primitive = next(
            node for node in doc.root.iter_nodes() if node.geometry is not None
        )
        steps.append(
            reconstruct.RenderStep(
                index=i,
                primitive=primitive,
                fragment=fragment,
                provenance=(),
                doc=doc,
            )
        )
    return reconstruct.StepSequence(steps=tuple(steps), source=None)


def cmd_assemble(config: PipelineConfig) -> RunManifest:
    """Assemble accepted annotations into train/test chat JSONL files.

    The stage is one deterministic pass over all annotation records, so a
    re-run (even after interruption) rewrites identical outputs.
    """
    manifest = RunManifest.start("assemble", config)
    ann_dir = _annotations_dir(config)
    ann_paths = sorted(ann_dir.glob("*.json")) if ann_dir.is_dir() else []
    if not ann_paths:
        raise StageError("assemble: no annotation records; run annotate first")

    hashes = annotate_mod.template_hashes()
    samples = []
    for path in ann_paths:
        record = annotate_mod.AnnotationRecord.from_json(
            path.read_text(encoding="utf-8")
        )
        sid = record.sample_id
        try:
            seq = _load_sequence(config, sid)
            curated = _curated_dir(config) / f"{sid}.svg"
            doc = core.parse_svg(curated.read_bytes())
            sample = dataset.assemble(
                record,
                seq,
                doc,
                clip_threshold=config.clip_threshold,
                ppl_threshold=config.ppl_threshold,
                template_hashes=hashes,
            )
            samples.append(sample)
        except SvgPipeError as exc:
            manifest.reject(type(exc).__name__)

    if not samples:
        raise StageError("assemble: every annotation record was rejected")

    test_count = min(config.test_count, max(len(samples) - 1, 0))
    try:
        train, test = dataset.split_dataset(
            samples, test_count=test_count, rng_seed=config.rng_seed
        )
    except InsufficientSamples as exc:
        raise StageError(f"assemble: {exc}") from exc

    ds_dir = _dataset_dir(config)
    ds_dir.mkdir(parents=True, exist_ok=True)
    dataset.write_jsonl(train, ds_dir / "train.jsonl")
    dataset.write_jsonl(test, ds_dir / "test.jsonl")
    dataset.write_manifest(
        ds_dir / "dataset_manifest.json",
        train_count=len(train),
        test_count=len(test),
        clip_threshold=config.clip_threshold,
        ppl_threshold=config.ppl_threshold,
        rng_seed=config.rng_seed,
        template_hashes=hashes,
    )

    manifest.counters["inputs"] = len(ann_paths)
    manifest.counters["assembled"] = len(samples)
    manifest.counters["train"] = len(train)
    manifest.counters["test"] = len(test)
    manifest.reconcile("inputs", "assembled")
    manifest.finish().write(Path(config.output_dir))
    return manifest


# ---------------------------------------------------------------------------
# Stage: evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(config: PipelineConfig) -> RunManifest:
    """Compute whichever metrics the configured inputs allow.

    Requires at least one metric input; missing metrics are reported as
    ``null`` rather than fabricated.
    """
    manifest = RunManifest.start("evaluate", config)

    fid_value = None
    if config.real_features and config.gen_features:
        real = metrics.load_features(config.real_features)
        gen = metrics.load_features(config.gen_features)
        fid_value = metrics.fid(real, gen)

    fid_clip_value = None
    if config.clip_real_features and config.clip_gen_features:
        real = metrics.load_features(config.clip_real_features)
        gen = metrics.load_features(config.clip_gen_features)
        fid_clip_value = metrics.fid_clip(real, gen)

    clip_value = None
    if config.clip_image_features and config.clip_text_features:
        images = metrics.load_features(config.clip_image_features)
        texts = metrics.load_features(config.clip_text_features)
        clip_value = metrics.clip_score(images, texts)

    stats_dir = config.stats_svg_dir or str(_curated_dir(config))
    svg_paths = sorted(Path(stats_dir).glob("*.svg")) if Path(stats_dir).is_dir() else []
    stats = None
    if svg_paths:
        stats = metrics.svg_stats([p.read_bytes() for p in svg_paths])

    if fid_value is None and fid_clip_value is None and clip_value is None and stats is None:
        raise StageError("evaluate: no metric inputs configured")

    counted = stats.counted if stats else 0
    report = metrics.MetricsReport(
        fid=fid_value,
        clip_score=clip_value,
        fid_clip=fid_clip_value,
        avg_file_size_kb=stats.avg_file_size_kb if stats else None,
        avg_primitives_used=stats.avg_primitives_used if stats else None,
        sample_count=counted,
    )
    report_path = Path(config.output_dir) / "metrics_report.json"
    _write_if_changed(report_path, (report.to_json() + "\n").encode("utf-8"))

    manifest.counters["svg_count"] = len(svg_paths)
    manifest.counters["svg_counted"] = counted
    manifest.counters["svg_degenerate"] = stats.degenerate if stats else 0
    manifest.finish().write(Path(config.output_dir))
    return manifest


# ---------------------------------------------------------------------------
# Stage: generate
# ---------------------------------------------------------------------------


def _sampling_config(config: PipelineConfig) -> inference.SamplingConfig:
    try:
        if config.sampling_mode == "greedy":
            return inference.SamplingConfig(mode="greedy")
        return inference.SamplingConfig(
            mode=config.sampling_mode,
            top_p=config.top_p,
            temperature=config.temperature,
        )
    except ValueError as exc:
        raise StageError(f"generate: {exc}") from exc


def cmd_generate(config: PipelineConfig) -> RunManifest:
    """Generate SVGs for each prompt in the prompt file and render them."""
    manifest = RunManifest.start("generate", config)
    if not config.gen_endpoint:
        raise StageError("generate: gen_endpoint is not configured (set GEN_ENDPOINT)")
    if not config.prompts_file:
        raise StageError("generate: prompts_file is not configured")
    prompt_lines = [
        line.strip()
        for line in Path(config.prompts_file).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if not prompt_lines:
        raise StageError(f"generate: no prompts in {config.prompts_file!r}")

    client = annotate_mod.ChatClient(
        endpoint=config.gen_endpoint,
        api_key=config.gen_api_key,
        model=config.gen_model,
    )
    sampling = _sampling_config(config)
    gen_dir = _generations_dir(config)
    gen_dir.mkdir(parents=True, exist_ok=True)

    generated = 0
    skipped = 0
    for i, prompt in enumerate(prompt_lines, start=1):
        gen_id = f"gen_{i:04d}"
        record_path = gen_dir / f"{gen_id}.json"
        if record_path.exists():
            prior = json.loads(record_path.read_text(encoding="utf-8"))
            if prior.get("valid"):
                generated += 1
            else:
                manifest.reject(prior.get("failure_reason") or "Invalid")
            skipped += 1
            continue
        try:
            result = inference.generate(
                prompt, sampling, client, size=config.canvas_size
            )
        except SvgPipeError as exc:
            manifest.reject(type(exc).__name__)
            continue
        inference.save_generation(result, gen_dir, gen_id)
        if result.valid:
            generated += 1
        else:
            manifest.reject(result.failure_reason or "Invalid")

    manifest.counters["prompts"] = len(prompt_lines)
    manifest.counters["generated"] = generated
    manifest.counters["skipped_existing"] = skipped
    manifest.reconcile("prompts", "generated")
    manifest.finish().write(Path(config.output_dir))
    return manifest


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_STAGES = {
    "ingest": cmd_ingest,
    "render": cmd_render,
    "annotate": cmd_annotate,
    "assemble": cmd_assemble,
    "evaluate": cmd_evaluate,
    "generate": cmd_generate,
}


def _flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svgpipe",
        description="Convert raw SVG corpora into step-by-step text-to-SVG "
        "training data.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage, fn in _STAGES.items():
        stage_parser = sub.add_parser(stage, help=fn.__doc__.splitlines()[0])
        stage_parser.add_argument("--config", default=None, metavar="FILE",
                                  help="key=value configuration file")
        for key, default in _DEFAULTS.items():
            stage_parser.add_argument(
                _flag_name(key),
                dest=key,
                default=None,
                metavar=key.upper(),
                help=f"override {key} (default: {default!r})",
            )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {key: getattr(args, key) for key in _DEFAULTS}
    try:
        config = PipelineConfig.load(config_file=args.config, overrides=overrides)
        manifest = _STAGES[args.stage](config)
    except SvgPipeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    summary = {"counters": manifest.counters, "rejected": manifest.rejected}
    print(f"{manifest.stage}: {json.dumps(summary, sort_keys=True)}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
