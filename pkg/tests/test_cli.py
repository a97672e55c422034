"""Orchestrator: config layering, manifests, stage wiring, resumability."""

import hashlib
import json
from pathlib import Path

import pytest

from svgpipe import cli, core, dataset
from svgpipe.errors import StageError

from mock_services import MockAnnotator, MockGenerator, MockModelService

GOOD_BODIES = [
    '<rect x="4" y="4" width="24" height="24" fill="#d62728"/>'
    '<circle cx="44" cy="20" r="10" fill="#1f77b4"/>',
    '<circle cx="32" cy="32" r="20" fill="#2ca02c"/>'
    '<rect x="26" y="26" width="12" height="12" fill="#ffffff"/>',
    '<polygon points="8,56 32,8 56,56" fill="#9467bd"/>',
    '<rect x="0" y="0" width="64" height="32" fill="#8c564b"/>'
    '<rect x="0" y="32" width="64" height="32" fill="#e377c2"/>'
    '<circle cx="32" cy="32" r="8" fill="#7f7f7f"/>',
    '<ellipse cx="32" cy="32" rx="24" ry="12" fill="#bcbd22"/>',
    '<line x1="8" y1="8" x2="56" y2="56" stroke="#17becf" stroke-width="6"/>'
    '<rect x="40" y="8" width="14" height="14" fill="#ff7f0e"/>',
    '<path d="M 8 32 L 32 8 L 56 32 Z" fill="#aec7e8"/>',
    '<rect x="10" y="10" width="20" height="40" fill="#ffbb78"/>'
    '<circle cx="48" cy="48" r="9" fill="#98df8a"/>',
    '<polygon points="32,4 40,24 60,24 44,38 50,58 32,46 14,58 20,38 4,24 24,24"'
    ' fill="#c5b0d5"/>',
    '<circle cx="16" cy="16" r="9" fill="#c49c94"/>'
    '<circle cx="48" cy="16" r="9" fill="#f7b6d2"/>'
    '<circle cx="32" cy="48" r="9" fill="#dbdb8d"/>',
]


def svg_of(body: str) -> str:
    return ('<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 64 64">'
            f'{body}</svg>')


@pytest.fixture()
def corpus(tmp_path) -> Path:
    corpus_dir = tmp_path / "corpus"
    corpus_dir.mkdir()
    for i, body in enumerate(GOOD_BODIES):
        (corpus_dir / f"scene_{i:02d}.svg").write_text(svg_of(body))
    # One malformed file, one duplicate of scene_00 under a new name.
    (corpus_dir / "zz_broken.svg").write_text("<svg <<< nope")
    (corpus_dir / "zz_dup.svg").write_text(svg_of(GOOD_BODIES[0]))
    return corpus_dir


def run_cli(*argv: str) -> int:
    return cli.main(list(argv))


def stage_args(stage: str, corpus_dir: Path, out_dir: Path, *extra: str) -> list:
    return [stage, "--corpus-dir", str(corpus_dir),
            "--output-dir", str(out_dir), "--canvas-size", "64", *extra]


def tree_digest(root: Path, exclude: tuple = ("manifests",)) -> str:
    """Order-stable digest of every file under root (paths + bytes)."""
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_dir():
            continue
        rel = path.relative_to(root)
        if rel.parts and rel.parts[0] in exclude:
            continue
        h.update(str(rel).encode())
        h.update(b"\0")
        h.update(path.read_bytes())
        h.update(b"\0")
    return h.hexdigest()


def read_manifest(out_dir: Path, stage: str) -> dict:
    return json.loads((out_dir / "manifests" / f"{stage}.json").read_text())


# ---------------------------------------------------------------------------
# Configuration layering
# ---------------------------------------------------------------------------


def test_defaults_load_without_sources():
    config = cli.PipelineConfig.load(env={})
    assert config.canvas_size == 512
    assert config.length_cutoff == 8192
    assert config.clip_threshold == 0.22
    assert config.ppl_threshold == 40.0
    assert config.test_count == 1000
    assert config.sampling_mode == "greedy"


def test_config_file_overrides_defaults(tmp_path):
    cfg = tmp_path / "pipe.cfg"
    cfg.write_text("# comment line\n\ncanvas_size = 256\nskip_filter = true\n"
                   "clip_threshold=0.5\n")
    config = cli.PipelineConfig.load(config_file=cfg, env={})
    assert config.canvas_size == 256
    assert config.skip_filter is True
    assert config.clip_threshold == 0.5
    assert config.length_cutoff == 8192          # untouched default


def test_env_overrides_file(tmp_path):
    cfg = tmp_path / "pipe.cfg"
    cfg.write_text("canvas_size=256\n")
    config = cli.PipelineConfig.load(
        config_file=cfg, env={"SVGPIPE_CANVAS_SIZE": "128"})
    assert config.canvas_size == 128


def test_env_aliases_for_endpoints():
    config = cli.PipelineConfig.load(env={
        "ANNOTATOR_ENDPOINT": "http://a", "ANNOTATOR_API_KEY": "k1",
        "EMBED_ENDPOINT": "http://e", "SCORE_ENDPOINT": "http://s",
        "GEN_ENDPOINT": "http://g", "GEN_API_KEY": "k2"})
    assert config.annotator_endpoint == "http://a"
    assert config.annotator_api_key == "k1"
    assert config.embed_endpoint == "http://e"
    assert config.score_endpoint == "http://s"
    assert config.gen_endpoint == "http://g"
    assert config.gen_api_key == "k2"


def test_cli_overrides_beat_env(tmp_path):
    cfg = tmp_path / "pipe.cfg"
    cfg.write_text("canvas_size=256\n")
    config = cli.PipelineConfig.load(
        config_file=cfg, env={"SVGPIPE_CANVAS_SIZE": "128"},
        overrides={"canvas_size": "64"})
    assert config.canvas_size == 64


def test_unknown_config_file_key_is_error(tmp_path):
    cfg = tmp_path / "pipe.cfg"
    cfg.write_text("canvas_sizzle=9\n")
    with pytest.raises(StageError, match="unknown config key"):
        cli.PipelineConfig.load(config_file=cfg, env={})


def test_unknown_override_key_is_error():
    with pytest.raises(StageError, match="unknown config key"):
        cli.PipelineConfig.load(env={}, overrides={"not_a_key": "1"})


def test_malformed_config_line_is_error(tmp_path):
    cfg = tmp_path / "pipe.cfg"
    cfg.write_text("canvas_size\n")
    with pytest.raises(StageError, match="key=value"):
        cli.PipelineConfig.load(config_file=cfg, env={})


@pytest.mark.parametrize("raw,expected", [
    ("true", True), ("Yes", True), ("1", True), ("on", True),
    ("false", False), ("No", False), ("0", False), ("off", False)])
def test_bool_coercion(raw, expected):
    config = cli.PipelineConfig.load(env={"SVGPIPE_SKIP_FILTER": raw})
    assert config.skip_filter is expected


def test_bad_bool_and_int_coercion():
    with pytest.raises(StageError, match="boolean"):
        cli.PipelineConfig.load(env={"SVGPIPE_SKIP_FILTER": "maybe"})
    with pytest.raises(StageError, match="integer"):
        cli.PipelineConfig.load(env={"SVGPIPE_CANVAS_SIZE": "big"})
    with pytest.raises(StageError, match="number"):
        cli.PipelineConfig.load(env={"SVGPIPE_CLIP_THRESHOLD": "high"})


def test_snapshot_redacts_secrets():
    config = cli.PipelineConfig.load(env={"ANNOTATOR_API_KEY": "sk-secret",
                                          "GEN_API_KEY": "sk-other"})
    snap = config.snapshot()
    assert snap["annotator_api_key"] == "<redacted>"
    assert snap["gen_api_key"] == "<redacted>"
    assert "sk-secret" not in json.dumps(snap)
    # Empty secrets stay empty (not misleadingly "redacted").
    assert cli.PipelineConfig.load(env={}).snapshot()["gen_api_key"] == ""


def test_run_id_depends_only_on_config():
    config = cli.PipelineConfig.load(env={})
    m1 = cli.RunManifest.start("ingest", config)
    m2 = cli.RunManifest.start("ingest", config)
    assert m1.run_id == m2.run_id
    assert m1.run_id.startswith("ingest-")
    other = cli.PipelineConfig.load(env={"SVGPIPE_CANVAS_SIZE": "64"})
    assert cli.RunManifest.start("ingest", other).run_id != m1.run_id


def test_manifest_reconcile_raises_on_mismatch():
    config = cli.PipelineConfig.load(env={})
    manifest = cli.RunManifest.start("render", config)
    manifest.counters["inputs"] = 5
    manifest.counters["rendered"] = 3
    manifest.reject("SomeError")
    with pytest.raises(StageError, match="counter mismatch"):
        manifest.reconcile("inputs", "rendered")
    manifest.reject("SomeError")
    manifest.reconcile("inputs", "rendered")      # 3 + 2 == 5


# ---------------------------------------------------------------------------
# Stage failure modes
# ---------------------------------------------------------------------------


def test_ingest_empty_corpus_fails(tmp_path, capsys):
    empty = tmp_path / "none"
    empty.mkdir()
    rc = run_cli(*stage_args("ingest", empty, tmp_path / "out"))
    assert rc == 1
    assert "EmptyCorpus" in capsys.readouterr().err


def test_render_without_ingest_fails(tmp_path, capsys):
    rc = run_cli(*stage_args("render", tmp_path, tmp_path / "out"))
    assert rc == 1
    assert "StageError" in capsys.readouterr().err


def test_annotate_requires_endpoints(corpus, tmp_path, capsys):
    out = tmp_path / "out"
    assert run_cli(*stage_args("ingest", corpus, out)) == 0
    assert run_cli(*stage_args("render", corpus, out)) == 0
    rc = run_cli(*stage_args("annotate", corpus, out))
    assert rc == 1
    assert "annotator_endpoint" in capsys.readouterr().err


def test_annotate_requires_filter_services_unless_skipped(corpus, tmp_path, capsys):
    out = tmp_path / "out"
    run_cli(*stage_args("ingest", corpus, out))
    run_cli(*stage_args("render", corpus, out))
    rc = run_cli(*stage_args("annotate", corpus, out,
                             "--annotator-endpoint", "http://nowhere"))
    assert rc == 1
    assert "embed_endpoint" in capsys.readouterr().err


def test_evaluate_without_inputs_fails(tmp_path, capsys):
    rc = run_cli(*stage_args("evaluate", tmp_path, tmp_path / "out"))
    assert rc == 1
    assert "no metric inputs" in capsys.readouterr().err


def test_generate_needs_prompts_and_endpoint(tmp_path, capsys):
    rc = run_cli(*stage_args("generate", tmp_path, tmp_path / "out"))
    assert rc == 1
    assert "gen_endpoint" in capsys.readouterr().err


def test_bad_sampling_mode_is_stage_error(tmp_path, capsys):
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("a prompt\n")
    rc = run_cli(*stage_args("generate", tmp_path, tmp_path / "out",
                             "--gen-endpoint", "http://nowhere",
                             "--prompts-file", str(prompts),
                             "--sampling-mode", "beam"))
    assert rc == 1
    assert "sampling" in capsys.readouterr().err.lower()


# ---------------------------------------------------------------------------
# Ingest details
# ---------------------------------------------------------------------------


def test_ingest_curates_dedupes_and_rejects(corpus, tmp_path, capsys):
    out = tmp_path / "out"
    rc = run_cli(*stage_args("ingest", corpus, out))
    assert rc == 0
    stdout = capsys.readouterr().out
    assert stdout.startswith("ingest: ")

    manifest = read_manifest(out, "ingest")
    assert manifest["counters"]["ingested"] == 12
    assert manifest["counters"]["accepted"] == 10
    assert manifest["counters"]["duplicates"] == 1
    assert manifest["rejected"] == {"MalformedXml": 1}

    curated = sorted((out / "curated").glob("*.svg"))
    assert len(curated) == 10
    for path in curated:
        doc = core.parse_svg(path.read_bytes())
        assert core.serialize(doc) == path.read_bytes()   # canonical on disk
        assert path.stem == cli.sample_id_for(path.read_bytes())

    index = json.loads((out / "curated" / "index.json").read_text())
    assert index["zz_dup.svg"] == index["scene_00.svg"]
    assert "zz_broken.svg" not in index
    rejects = json.loads((out / "rejects" / "ingest.json").read_text())
    assert rejects == {"zz_broken.svg": "MalformedXml"}


def test_ingest_length_cutoff_rejects(corpus, tmp_path):
    out = tmp_path / "out"
    rc = run_cli(*stage_args("ingest", corpus, out, "--length-cutoff", "160"))
    assert rc == 0
    manifest = read_manifest(out, "ingest")
    assert manifest["rejected"].get("LengthOverflow", 0) > 0
    total = manifest["counters"]["accepted"] + manifest["counters"]["duplicates"] \
        + sum(manifest["rejected"].values())
    assert total == manifest["counters"]["ingested"]


# ---------------------------------------------------------------------------
# Full pipeline end to end (mocked services)
# ---------------------------------------------------------------------------


def run_pipeline(corpus: Path, out: Path, tmp_path: Path) -> dict:
    """ingest -> render -> annotate -> assemble -> evaluate -> generate."""
    assert run_cli(*stage_args("ingest", corpus, out)) == 0
    assert run_cli(*stage_args("render", corpus, out)) == 0
    with MockAnnotator() as ann, MockModelService() as svc:
        assert run_cli(*stage_args(
            "annotate", corpus, out,
            "--annotator-endpoint", ann.endpoint,
            "--embed-endpoint", svc.endpoint,
            "--score-endpoint", svc.endpoint)) == 0
    assert run_cli(*stage_args("assemble", corpus, out,
                               "--test-count", "2")) == 0
    assert run_cli(*stage_args("evaluate", corpus, out)) == 0
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("a blue square\na red circle\n")
    with MockGenerator() as gen:
        assert run_cli(*stage_args("generate", corpus, out,
                                   "--gen-endpoint", gen.endpoint,
                                   "--prompts-file", str(prompts))) == 0
    return {stage: read_manifest(out, stage)
            for stage in ("ingest", "render", "annotate", "assemble",
                          "evaluate", "generate")}


def test_end_to_end_pipeline(corpus, tmp_path):
    out = tmp_path / "out"
    manifests = run_pipeline(corpus, out, tmp_path)

    assert manifests["render"]["counters"]["rendered"] == 10
    assert manifests["annotate"]["counters"]["annotated"] == 10
    assert manifests["assemble"]["counters"] == {
        "inputs": 10, "assembled": 10, "train": 8, "test": 2}
    assert manifests["generate"]["counters"] == {
        "prompts": 2, "generated": 2, "skipped_existing": 0}

    # Render outputs: frames, masks, steps, diffs for each curated sample.
    for sid_dir in (out / "renders").iterdir():
        steps = json.loads((sid_dir / "steps.json").read_text())
        n = steps["n"]
        assert len(list(sid_dir.glob("step_*.png"))) == n
        assert len(list(sid_dir.glob("mask_*.png"))) == n
        diffs = json.loads((sid_dir / "diffs.json").read_text())
        assert [d["step"] for d in diffs["steps"]] == list(range(1, n + 1))
        assert all(d["changed_pixels"] > 0 for d in diffs["steps"])

    # Dataset is valid chat JSONL and disjoint between splits.
    train = dataset.read_jsonl(out / "dataset" / "train.jsonl")
    test = dataset.read_jsonl(out / "dataset" / "test.jsonl")
    assert len(train) == 8 and len(test) == 2
    train_ids = {s.sample_id for s in train}
    test_ids = {s.sample_id for s in test}
    assert not (train_ids & test_ids)
    for sample in train + test:
        doc = core.parse_svg(sample.svg_code.encode())
        assert core.serialize(doc) == sample.svg_code.encode()

    # Metrics report: stats only (no feature files configured).
    report = json.loads((out / "metrics_report.json").read_text())
    assert report["fid"] is None
    assert report["clip_score"] is None
    assert report["sample_count"] == 10
    assert report["avg_primitives_used"] > 0

    # Generations: a JSON + PNG pair per prompt.
    gens = sorted((out / "generations").glob("gen_*.json"))
    assert len(gens) == 2
    for path in gens:
        payload = json.loads(path.read_text())
        assert payload["valid"] is True
        assert path.with_suffix(".png").exists()


def test_rerun_is_byte_identical_and_resumes(corpus, tmp_path):
    out = tmp_path / "out"
    manifests = run_pipeline(corpus, out, tmp_path)
    digest1 = tree_digest(out)

    # Delete one render directory and one annotation; re-run those stages.
    victim = sorted((out / "renders").iterdir())[3]
    sid = victim.name
    for p in sorted(victim.rglob("*"), reverse=True):
        p.unlink()
    victim.rmdir()
    (out / "annotations" / f"{sid}.json").unlink()

    assert run_cli(*stage_args("render", corpus, out)) == 0
    with MockAnnotator() as ann, MockModelService() as svc:
        assert run_cli(*stage_args(
            "annotate", corpus, out,
            "--annotator-endpoint", ann.endpoint,
            "--embed-endpoint", svc.endpoint,
            "--score-endpoint", svc.endpoint)) == 0

    assert tree_digest(out) == digest1
    render2 = read_manifest(out, "render")
    assert render2["counters"]["rendered"] == \
        manifests["render"]["counters"]["rendered"]
    assert render2["counters"]["skipped_existing"] == 9


def test_assemble_rerun_writes_identical_dataset(corpus, tmp_path):
    out = tmp_path / "out"
    run_pipeline(corpus, out, tmp_path)
    train_path = out / "dataset" / "train.jsonl"
    before = train_path.read_bytes()
    assert run_cli(*stage_args("assemble", corpus, out,
                               "--test-count", "2")) == 0
    assert train_path.read_bytes() == before


def test_interrupted_render_resumes_byte_identical(corpus, tmp_path, monkeypatch):
    out_a = tmp_path / "baseline"
    out_b = tmp_path / "interrupted"
    run_cli(*stage_args("ingest", corpus, out_a))
    run_cli(*stage_args("ingest", corpus, out_b))
    assert run_cli(*stage_args("render", corpus, out_a)) == 0

    real_render_one = cli._render_one
    calls = {"n": 0}

    def flaky(config, sid):
        calls["n"] += 1
        if calls["n"] == 4:
            raise KeyboardInterrupt
        real_render_one(config, sid)

    monkeypatch.setattr(cli, "_render_one", flaky)
    with pytest.raises(KeyboardInterrupt):
        run_cli(*stage_args("render", corpus, out_b))
    monkeypatch.setattr(cli, "_render_one", real_render_one)

    # Partial progress exists but is incomplete.
    done_after_interrupt = len(list((out_b / "renders").glob("*/diffs.json")))
    assert 0 < done_after_interrupt < 10

    assert run_cli(*stage_args("render", corpus, out_b)) == 0
    assert tree_digest(out_b / "renders") == tree_digest(out_a / "renders")
    manifest = read_manifest(out_b, "render")
    assert manifest["counters"]["rendered"] == 10
    assert manifest["counters"]["inputs"] == 10


def test_annotate_skip_filter_accepts_unfiltered(corpus, tmp_path):
    out = tmp_path / "out"
    run_cli(*stage_args("ingest", corpus, out))
    run_cli(*stage_args("render", corpus, out))
    with MockAnnotator() as ann:
        assert run_cli(*stage_args(
            "annotate", corpus, out,
            "--annotator-endpoint", ann.endpoint,
            "--skip-filter", "true")) == 0
    records = sorted((out / "annotations").glob("*.json"))
    assert len(records) == 10
    for path in records:
        payload = json.loads(path.read_text())
        assert payload["accepted"] is True
        assert "unfiltered" in payload["flags"]
        assert payload["clip_score"] is None


def test_annotate_filter_rejections_counted(corpus, tmp_path):
    out = tmp_path / "out"
    run_cli(*stage_args("ingest", corpus, out))
    run_cli(*stage_args("render", corpus, out))
    # Orthogonal embeddings: cosine 0 < 0.22, every record rejected by the
    # gate but still written (accepted=false), none dropped.
    with MockAnnotator() as ann, \
            MockModelService(text_vector=(0.0, 1.0, 0.0, 0.0)) as svc:
        assert run_cli(*stage_args(
            "annotate", corpus, out,
            "--annotator-endpoint", ann.endpoint,
            "--embed-endpoint", svc.endpoint,
            "--score-endpoint", svc.endpoint)) == 0
    records = sorted((out / "annotations").glob("*.json"))
    assert len(records) == 10
    assert all(not json.loads(p.read_text())["accepted"] for p in records)
    # Assemble then refuses every record.
    rc = run_cli(*stage_args("assemble", corpus, out, "--test-count", "2"))
    assert rc == 1


def test_generate_resume_preserves_invalid_outcomes(corpus, tmp_path):
    out = tmp_path / "out"
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("good one\nBAD two\ngood three\n")

    def reply(messages):
        if "BAD" in messages[1]["content"]:
            return "no grammar at all"
        return ("<think>\nStep 1: ok\n</think>\n"
                '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 8 8">'
                '<rect x="0" y="0" width="8" height="8" fill="black"/></svg>')

    with MockGenerator(reply_fn=reply) as gen:
        assert run_cli(*stage_args("generate", corpus, out,
                                   "--gen-endpoint", gen.endpoint,
                                   "--prompts-file", str(prompts))) == 0
        first = read_manifest(out, "generate")
        n_requests = len(gen.requests)
    assert first["counters"]["generated"] == 2
    assert first["rejected"] == {"NoThinkBlock": 1}
    assert n_requests == 3

    # Re-run: every output exists, nothing is re-requested, counters match.
    with MockGenerator(reply_fn=reply) as gen:
        assert run_cli(*stage_args("generate", corpus, out,
                                   "--gen-endpoint", gen.endpoint,
                                   "--prompts-file", str(prompts))) == 0
        assert gen.requests == []
    second = read_manifest(out, "generate")
    assert second["counters"]["generated"] == 2
    assert second["counters"]["skipped_existing"] == 3
    assert second["rejected"] == {"NoThinkBlock": 1}
