"""Serve the sidecar: ``physfield-sidecar --mode mock --port 8731``."""

from __future__ import annotations

import argparse

from .app import SidecarConfig, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="physfield-sidecar")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8731)
    parser.add_argument("--mode", choices=["mock", "real"], default="mock")
    parser.add_argument("--dim", type=int, default=512)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--clip-model", default="openai/clip-vit-base-patch16")
    parser.add_argument("--caption-model",
                        default="Salesforce/blip-image-captioning-base")
    parser.add_argument("--completion-model", default="gpt-3.5-turbo")
    parser.add_argument("--completion-endpoint",
                        default="https://api.openai.com/v1")
    args = parser.parse_args(argv)

    config = SidecarConfig(
        host=args.host, port=args.port, mode=args.mode, dim=args.dim,
        seed=args.seed, clip_model=args.clip_model,
        caption_model=args.caption_model,
        completion_model=args.completion_model,
        completion_endpoint=args.completion_endpoint)

    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
