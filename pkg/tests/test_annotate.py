"""Annotation dialogue protocol, retries, filtering, and record round trips."""

import math

import numpy as np
import pytest

from svgpipe import annotate
from svgpipe.errors import (
    ContextOverflow,
    EmptyResponse,
    EndpointError,
    ProviderError,
    ZeroVector,
)

from mock_services import MockAnnotator, MockModelService


def frame(seed: int, size: int = 8) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)


FRAMES = [frame(i) for i in range(4)]        # I_1..I_4 -> 3 transitions


class ZeroRng:
    """random() == 0 -> backoff delays are exactly 1.0, 2.0, 4.0, ..."""

    def random(self) -> float:
        return 0.0


def client_for(mock, **kw) -> annotate.ChatClient:
    kw.setdefault("rng", ZeroRng())
    kw.setdefault("sleep", lambda s: None)
    return annotate.ChatClient(mock.endpoint, **kw)


# ---------------------------------------------------------------------------
# Dialogue protocol shape
# ---------------------------------------------------------------------------


def test_request_message_counts_grow_by_two_per_round():
    with MockAnnotator() as mock:
        annotate.annotate_sample("s1", FRAMES, client_for(mock))
        counts = [r["n_messages"] for r in mock.requests]
    # Request k carries system + k completed exchanges (2 turns each) + the
    # new user turn: 2 + 2k messages.
    assert counts == [2, 4, 6, 8]


def test_global_request_has_one_image_steps_have_three():
    with MockAnnotator() as mock:
        annotate.annotate_sample("s1", FRAMES, client_for(mock))
        last = [r["n_images_last"] for r in mock.requests]
        totals = [r["n_images_total"] for r in mock.requests]
    assert last == [1, 3, 3, 3]
    # History keeps earlier images: 1 (global) + 3 per completed step.
    assert totals == [1, 4, 7, 10]


def test_annotation_is_deterministic_for_fixed_frames():
    with MockAnnotator() as mock:
        rec1 = annotate.annotate_sample("s1", FRAMES, client_for(mock))
    with MockAnnotator() as mock:
        rec2 = annotate.annotate_sample("s1", FRAMES, client_for(mock))
    assert rec1.to_json() == rec2.to_json()


def test_record_shape_and_metadata():
    with MockAnnotator() as mock:
        rec = annotate.annotate_sample("abc123", FRAMES, client_for(mock))
    assert rec.sample_id == "abc123"
    assert rec.t_g.startswith("a scene ")
    assert [s.index for s in rec.steps] == [1, 2, 3]
    assert all(isinstance(s.text, str) and s.text for s in rec.steps)
    assert rec.metadata["transition_convention"] == \
        "step i describes frame i -> frame i+1"
    assert rec.metadata["template_hashes"] == annotate.template_hashes()
    # Scores are filled in by filter_record, not annotation.
    assert rec.clip_score is None and rec.perplexity is None
    assert rec.accepted is None


def test_single_frame_sample_has_no_steps():
    with MockAnnotator() as mock:
        rec = annotate.annotate_sample("s1", FRAMES[:1], client_for(mock))
        assert len(mock.requests) == 1
    assert rec.steps == []
    assert rec.t_g


def test_no_frames_raises_empty_response():
    with MockAnnotator() as mock:
        with pytest.raises(EmptyResponse):
            annotate.annotate_sample("s1", [], client_for(mock))


def test_api_key_sent_as_bearer_and_params_forwarded():
    with MockAnnotator() as mock:
        client = client_for(mock, api_key="sk-test")
        client.complete([annotate.DialogueTurn("user", "hi")], temperature=0.5)
        req = mock.requests[0]
    assert req["auth"] == "Bearer sk-test"
    assert req["params"] == {"temperature": 0.5}


# ---------------------------------------------------------------------------
# Retries, backoff, and failure taxonomy
# ---------------------------------------------------------------------------


def test_retries_transient_500_with_exponential_backoff():
    sleeps = []
    with MockAnnotator(fail_first=2) as mock:
        client = client_for(mock, sleep=sleeps.append, backoff=1.0)
        text = client.complete([annotate.DialogueTurn("user", "hi")])
        assert len(mock.requests) == 3
    assert text
    # Zero jitter -> exactly the base schedule 1s then 2s.
    assert sleeps == [1.0, 2.0]


def test_gives_up_after_three_attempts():
    sleeps = []
    with MockAnnotator(fail_first=99) as mock:
        client = client_for(mock, sleep=sleeps.append)
        with pytest.raises(EndpointError, match="after 3 attempts"):
            client.complete([annotate.DialogueTurn("user", "hi")])
        assert len(mock.requests) == 3
    assert sleeps == [1.0, 2.0]


def test_jitter_scales_backoff():
    class HalfRng:
        def random(self):
            return 0.5

    sleeps = []
    with MockAnnotator(fail_first=2) as mock:
        client = client_for(mock, rng=HalfRng(), sleep=sleeps.append)
        client.complete([annotate.DialogueTurn("user", "hi")])
    assert sleeps == [1.125, 2.25]        # delay * (1 + 0.25*0.5)


def test_http_413_raises_context_overflow():
    with MockAnnotator(force_status=413) as mock:
        client = client_for(mock)
        with pytest.raises(ContextOverflow):
            client.complete([annotate.DialogueTurn("user", "hi")])
        assert len(mock.requests) == 1    # no retries on overflow


def test_plain_4xx_fails_immediately_without_retry():
    with MockAnnotator(force_status=404) as mock:
        client = client_for(mock)
        with pytest.raises(EndpointError):
            client.complete([annotate.DialogueTurn("user", "hi")])
        assert len(mock.requests) == 1


def test_empty_reply_raises_empty_response():
    with MockAnnotator(reply_fn=lambda messages: "  \n ") as mock:
        with pytest.raises(EmptyResponse):
            annotate.annotate_sample("s1", FRAMES[:2], client_for(mock))


def test_history_grows_only_after_success():
    with MockAnnotator(force_status=500) as mock:
        client = client_for(mock)
        session = annotate.AnnotationSession(client, "s1")
        assert len(session.history) == 1          # system turn only
        with pytest.raises(EndpointError):
            session.describe_global(FRAMES[-1])
        assert len(session.history) == 1          # failed turn not recorded
        mock.force_status = None
        session.describe_global(FRAMES[-1])
        assert len(session.history) == 3          # user + assistant appended
        final = mock.requests[-1]
        assert final["n_messages"] == 2           # retry never duplicated turns


def test_local_history_guard_raises_before_sending():
    templates = {"system": "s", "global": "g" * (annotate.MAX_HISTORY_CHARS + 1),
                 "step": "step {index}"}
    with MockAnnotator() as mock:
        client = client_for(mock)
        session = annotate.AnnotationSession(client, "s1", templates=templates)
        with pytest.raises(ContextOverflow):
            session.describe_global(FRAMES[-1])
        assert mock.requests == []


def test_long_step_text_truncated_with_marker_and_flag():
    def reply(messages):
        content = messages[-1].get("content")
        n_images = sum(1 for p in content if p.get("type") == "image_url") \
            if isinstance(content, list) else 0
        return "y" * 600 if n_images == 3 else "a short scene"

    with MockAnnotator(reply_fn=reply) as mock:
        rec = annotate.annotate_sample("s1", FRAMES[:2], client_for(mock))
    text = rec.steps[0].text
    assert len(text) == annotate.STEP_TEXT_CAP
    assert text.endswith(annotate.TRUNCATION_MARKER)
    assert "step_1_truncated" in rec.flags
    assert rec.t_g == "a short scene"            # global text is not capped


# ---------------------------------------------------------------------------
# Cosine and filtering
# ---------------------------------------------------------------------------


def test_cosine_basic_values():
    assert annotate.cosine([1, 0], [2, 0]) == pytest.approx(1.0)
    assert annotate.cosine([1, 0], [0, 3]) == pytest.approx(0.0)
    assert annotate.cosine([1, 2], [-1, -2]) == pytest.approx(-1.0)


def test_cosine_zero_vector_raises():
    with pytest.raises(ZeroVector):
        annotate.cosine([0, 0], [1, 0])
    with pytest.raises(ZeroVector):
        annotate.cosine([1, 0], [0, 0])


def make_rec(**kw) -> annotate.AnnotationRecord:
    defaults = dict(sample_id="s", t_g="global text here",
                    steps=[annotate.StepText(1, "first step"),
                           annotate.StepText(2, "second step")])
    defaults.update(kw)
    return annotate.AnnotationRecord(**defaults)


IMG = frame(0)


def test_filter_accepts_when_both_gates_pass():
    rec = annotate.filter_record(
        make_rec(), IMG,
        image_embed=lambda img: [1.0, 0.0],
        text_embed=lambda t: [1.0, 0.0],
        lm_scorer=lambda t: [0.1] * 4)
    assert rec.clip_score == pytest.approx(1.0)
    assert rec.perplexity == pytest.approx(math.exp(0.1))
    assert rec.accepted is True
    assert rec.metadata["clip_threshold"] == 0.22
    assert rec.metadata["ppl_threshold"] == 40.0
    assert rec.metadata["ppl_all_steps"] is False


def test_filter_rejects_low_clip():
    rec = annotate.filter_record(
        make_rec(), IMG,
        image_embed=lambda img: [1.0, 0.0],
        text_embed=lambda t: [0.0, 1.0],          # orthogonal -> cosine 0
        lm_scorer=lambda t: [0.1] * 4)
    assert rec.clip_score == pytest.approx(0.0)
    assert rec.accepted is False


def test_filter_rejects_high_perplexity():
    rec = annotate.filter_record(
        make_rec(), IMG,
        image_embed=lambda img: [1.0, 0.0],
        text_embed=lambda t: [1.0, 0.0],
        lm_scorer=lambda t: [5.0] * 4)            # ppl = e^5 ~ 148 > 40
    assert rec.perplexity == pytest.approx(math.exp(5.0))
    assert rec.accepted is False


def test_filter_thresholds_are_inclusive():
    def run(clip_threshold, ppl_threshold):
        return annotate.filter_record(
            make_rec(), IMG,
            image_embed=lambda img: [1.0, 1.0],
            text_embed=lambda t: [1.0, 0.0],
            lm_scorer=lambda t: [0.3] * 3,
            clip_threshold=clip_threshold, ppl_threshold=ppl_threshold)

    base = run(0.22, 40.0)
    # clip >= threshold accepts at equality; one ulp above rejects.
    assert run(base.clip_score, 40.0).accepted is True
    assert run(math.nextafter(base.clip_score, 2.0), 40.0).accepted is False
    # ppl <= threshold accepts at equality; one ulp below rejects.
    assert run(0.22, base.perplexity).accepted is True
    assert run(0.22, math.nextafter(base.perplexity, 0.0)).accepted is False


def test_filter_ppl_all_steps_takes_worst_text():
    def scorer(text):
        return [4.0] * 3 if "second" in text else [0.1] * 3

    kwargs = dict(image_embed=lambda img: [1.0, 0.0],
                  text_embed=lambda t: [1.0, 0.0], lm_scorer=scorer)
    only_global = annotate.filter_record(make_rec(), IMG, **kwargs)
    assert only_global.perplexity == pytest.approx(math.exp(0.1))
    assert only_global.accepted is True

    worst = annotate.filter_record(make_rec(), IMG, ppl_all_steps=True, **kwargs)
    assert worst.perplexity == pytest.approx(math.exp(4.0))
    assert worst.accepted is False                # e^4 ~ 54.6 > 40


def test_filter_wraps_provider_failures():
    def boom(img):
        raise EndpointError("embedding backend down")

    with pytest.raises(ProviderError):
        annotate.filter_record(make_rec(), IMG, image_embed=boom,
                               text_embed=lambda t: [1.0],
                               lm_scorer=lambda t: [0.1])


# ---------------------------------------------------------------------------
# Record serialization
# ---------------------------------------------------------------------------


def test_record_json_round_trip():
    rec = make_rec(clip_score=0.5, perplexity=2.25, accepted=True,
                   flags=["step_2_truncated"],
                   metadata={"transition_convention": "x", "k": [1, 2]})
    back = annotate.AnnotationRecord.from_json(rec.to_json())
    assert back == rec
    assert back.steps[0].index == 1 and back.steps[0].text == "first step"


def test_record_json_round_trip_preserves_unset_scores():
    rec = make_rec()
    back = annotate.AnnotationRecord.from_json(rec.to_json())
    assert back.clip_score is None
    assert back.perplexity is None
    assert back.accepted is None


# ---------------------------------------------------------------------------
# ServiceClient wire protocol
# ---------------------------------------------------------------------------


def test_service_client_embeddings_and_scores():
    with MockModelService(image_vector=(0.0, 1.0), text_vector=(1.0, 0.0),
                          nll_per_token=0.5) as mock:
        client = annotate.ServiceClient(mock.endpoint, api_key="sk-svc")
        assert client.embed_image(IMG) == [0.0, 1.0]
        assert client.embed_text("hello world") == [1.0, 0.0]
        assert client.score_text("one two three") == [0.5, 0.5, 0.5]
        paths = [r["path"] for r in mock.requests]
        assert paths == ["/embed/image", "/embed/text", "/score"]
        assert all(r["auth"] == "Bearer sk-svc" for r in mock.requests)


def test_service_client_score_endpoint_defaults_to_embed_endpoint():
    with MockModelService() as mock:
        client = annotate.ServiceClient(mock.endpoint)
        client.score_text("a b")
        assert mock.requests[-1]["path"] == "/score"


def test_service_client_non_200_raises_provider_error():
    with MockModelService() as mock:
        client = annotate.ServiceClient(mock.endpoint + "/missing")
        with pytest.raises(ProviderError):
            client.embed_text("x")


def test_filter_record_through_service_client():
    with MockModelService(nll_per_token=0.2) as mock:
        client = annotate.ServiceClient(mock.endpoint)
        rec = annotate.filter_record(
            make_rec(), IMG,
            image_embed=client.embed_image,
            text_embed=client.embed_text,
            lm_scorer=client.score_text)
    assert rec.clip_score == pytest.approx(1.0)   # collinear default vectors
    assert rec.perplexity == pytest.approx(math.exp(0.2))
    assert rec.accepted is True
