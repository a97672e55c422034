from __future__ import annotations

import http.server
import json
import sys
import threading
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from modelsvc.app import create_app

# Make services/tests/*.py helper modules importable regardless of rootdir.
_TESTS_DIR = str(Path(__file__).resolve().parent)
if _TESTS_DIR not in sys.path:
    sys.path.insert(0, _TESTS_DIR)


@pytest.fixture()
def client() -> TestClient:
    return TestClient(create_app(model_dir=None, token=None,
                                 describe_upstream=None))


class _UpstreamHandler(http.server.BaseHTTPRequestHandler):
    """Configurable mock of an upstream chat endpoint for /describe."""

    def do_POST(self):  # noqa: N802 - stdlib handler naming
        length = int(self.headers.get("Content-Length", "0"))
        payload = json.loads(self.rfile.read(length)) if length else {}
        self.server.requests.append(payload)
        mode = self.server.state["mode"]
        if mode == "fail500":
            self.send_response(500)
            self.end_headers()
            self.wfile.write(b"upstream exploded")
            return
        if mode == "retry429":
            self.send_response(429)
            self.send_header("Retry-After", "7")
            self.end_headers()
            self.wfile.write(b"rate limited")
            return
        last_text = ""
        for message in payload.get("messages", []):
            for part in message.get("content", []):
                if isinstance(part, dict) and part.get("type") == "text":
                    last_text = part["text"]
        body = json.dumps(
            {"choices": [{"message": {"content": f"echo: {last_text}"}}]}
        ).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):  # silence request logging
        pass


@pytest.fixture()
def mock_upstream():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _UpstreamHandler)
    server.state = {"mode": "echo"}
    server.requests = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_address[1]}/chat"
    try:
        yield url, server
    finally:
        server.shutdown()
        thread.join(timeout=5)
        server.server_close()
