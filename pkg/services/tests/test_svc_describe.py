"""Describe route: local captioner, image limit, upstream proxying, and
upstream failure mapping to 502."""

from __future__ import annotations

from fastapi.testclient import TestClient

from modelsvc.app import create_app
from svc_fixtures import GOLDEN_SPECS, chat_payload, draw_png

FIVE_FIXTURES = [(draw_png(shape, color), color, shape)
                 for shape, color, _, _ in GOLDEN_SPECS[:5]]


class TestLocalCaptioner:
    def test_golden_images_get_non_empty_descriptions(self, client):
        for png, color, shape in FIVE_FIXTURES:
            resp = client.post("/describe",
                               json=chat_payload("describe this image", [png]))
            assert resp.status_code == 200, resp.text
            text = resp.text
            assert text.strip(), "description must be non-empty"
            assert color in text and shape in text

    def test_caption_is_deterministic(self, client):
        payload = chat_payload("describe", [FIVE_FIXTURES[0][0]])
        first = client.post("/describe", json=payload).text
        second = client.post("/describe", json=payload).text
        assert first == second

    def test_three_images_accepted(self, client):
        pngs = [png for png, _, _ in FIVE_FIXTURES[:3]]
        resp = client.post("/describe", json=chat_payload("compare", pngs))
        assert resp.status_code == 200

    def test_four_images_rejected(self, client):
        pngs = [png for png, _, _ in FIVE_FIXTURES[:4]]
        resp = client.post("/describe", json=chat_payload("compare", pngs))
        assert resp.status_code == 400

    def test_no_image_is_400_locally(self, client):
        resp = client.post("/describe", json=chat_payload("hello", []))
        assert resp.status_code == 400

    def test_payload_without_messages_is_400(self, client):
        resp = client.post("/describe", json={"prompt": "hi"})
        assert resp.status_code == 400


class TestUpstreamProxy:
    def test_echo_passthrough(self, mock_upstream):
        url, server = mock_upstream
        client = TestClient(create_app(describe_upstream=url))
        png = FIVE_FIXTURES[0][0]
        resp = client.post("/describe",
                           json=chat_payload("the caption request", [png]))
        assert resp.status_code == 200
        assert resp.text == "echo: the caption request"
        # streaming is forced off before forwarding
        assert server.requests[-1]["stream"] is False

    def test_image_limit_enforced_before_forwarding(self, mock_upstream):
        url, server = mock_upstream
        client = TestClient(create_app(describe_upstream=url))
        pngs = [png for png, _, _ in FIVE_FIXTURES[:4]]
        resp = client.post("/describe", json=chat_payload("compare", pngs))
        assert resp.status_code == 400
        assert server.requests == []

    def test_upstream_500_maps_to_502(self, mock_upstream):
        url, server = mock_upstream
        server.state["mode"] = "fail500"
        client = TestClient(create_app(describe_upstream=url))
        resp = client.post("/describe", json=chat_payload("hi", []))
        assert resp.status_code == 502

    def test_upstream_retry_hint_is_preserved(self, mock_upstream):
        url, server = mock_upstream
        server.state["mode"] = "retry429"
        client = TestClient(create_app(describe_upstream=url))
        resp = client.post("/describe", json=chat_payload("hi", []))
        assert resp.status_code == 502
        assert resp.headers.get("Retry-After") == "7"

    def test_unreachable_upstream_maps_to_502(self):
        client = TestClient(create_app(describe_upstream="http://127.0.0.1:1/chat"))
        resp = client.post("/describe", json=chat_payload("hi", []))
        assert resp.status_code == 502
