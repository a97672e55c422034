"""Command-line entry point: run the service under uvicorn."""

from __future__ import annotations

import argparse

import uvicorn

from .app import create_app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="modelsvc",
        description="Serve image/text embeddings, NLL scoring, and image "
                    "descriptions over HTTP+JSON.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8901)
    parser.add_argument("--model-dir", default=None,
                        help="weights directory (defaults to $MODEL_DIR)")
    parser.add_argument("--token", default=None,
                        help="shared bearer token (defaults to $MODELSVC_TOKEN)")
    parser.add_argument("--describe-upstream", default=None,
                        help="chat endpoint to proxy /describe to "
                             "(defaults to $MODELSVC_DESCRIBE_UPSTREAM)")
    args = parser.parse_args(argv)

    app = create_app(model_dir=args.model_dir, token=args.token,
                     describe_upstream=args.describe_upstream)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
