"""FastAPI application wiring the four endpoints to a mock or real backend.

Wire contract (all JSON):
    POST /embed_patches {image: base64 PNG, centers: [[u, v], ...], patch: int}
        -> {vectors: [[D floats], ...]}
    POST /embed_text {texts: [str, ...]} -> {vectors: [[D floats], ...]}
    POST /caption {image: base64 PNG} -> {caption: str}
    POST /complete {system: str, user: str} -> {text: str}
    GET /health -> {mode: "mock"|"real", dim: D}

Malformed requests return 400 with a message; backend/model failures 502.
"""

from __future__ import annotations

import base64
import binascii
import io
from dataclasses import dataclass
from typing import List

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .mock import MockBackend
from .real import RealBackend, RealBackendError


@dataclass(frozen=True)
class SidecarConfig:
    host: str = "127.0.0.1"
    port: int = 8731
    mode: str = "mock"                   # mock | real
    dim: int = 512
    seed: int = 0
    max_image_bytes: int = 32 * 1024 * 1024
    max_centers: int = 200_000
    max_texts: int = 4096
    clip_model: str = "openai/clip-vit-base-patch16"
    caption_model: str = "Salesforce/blip-image-captioning-base"
    completion_model: str = "gpt-3.5-turbo"
    completion_endpoint: str = "https://api.openai.com/v1"

    def __post_init__(self):
        if self.mode not in ("mock", "real"):
            raise ValueError(f"mode must be mock or real, got {self.mode!r}")
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")


class EmbedPatchesRequest(BaseModel):
    image: str
    centers: List[List[int]]
    patch: int


class EmbedTextRequest(BaseModel):
    texts: List[str]


class CaptionRequest(BaseModel):
    image: str


class CompleteRequest(BaseModel):
    system: str
    user: str


class BadRequest(ValueError):
    pass


def _decode_image(b64: str, limit: int) -> bytes:
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise BadRequest(f"image is not valid base64: {exc}") from exc
    if len(raw) > limit:
        raise BadRequest(f"image exceeds {limit} bytes")
    from PIL import Image, UnidentifiedImageError

    try:
        Image.open(io.BytesIO(raw)).verify()
    except UnidentifiedImageError as exc:
        raise BadRequest(f"image payload is not a decodable image: {exc}") from exc
    return raw


def create_app(config: SidecarConfig = SidecarConfig()) -> FastAPI:
    app = FastAPI(title="physfield sidecar")
    if config.mode == "mock":
        backend = MockBackend(dim=config.dim, seed=config.seed)
    else:
        backend = RealBackend(
            dim=config.dim, clip_model=config.clip_model,
            caption_model=config.caption_model,
            completion_model=config.completion_model,
            completion_endpoint=config.completion_endpoint)

    @app.exception_handler(BadRequest)
    async def bad_request(_, exc: BadRequest):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(RealBackendError)
    async def backend_failure(_, exc: RealBackendError):
        return JSONResponse(status_code=502, content={"error": str(exc)})

    @app.get("/health")
    def health():
        return {"mode": config.mode, "dim": config.dim}

    @app.post("/embed_patches")
    def embed_patches(req: EmbedPatchesRequest):
        if not req.centers:
            raise BadRequest("centers must be non-empty")
        if len(req.centers) > config.max_centers:
            raise BadRequest(f"too many centers (limit {config.max_centers})")
        if any(len(c) != 2 for c in req.centers):
            raise BadRequest("each center must be a [u, v] pair")
        if req.patch < 1:
            raise BadRequest("patch size must be >= 1")
        image = _decode_image(req.image, config.max_image_bytes)
        return {"vectors": backend.embed_patches(image, req.centers, req.patch)}

    @app.post("/embed_text")
    def embed_text(req: EmbedTextRequest):
        if not req.texts:
            raise BadRequest("texts must be non-empty")
        if len(req.texts) > config.max_texts:
            raise BadRequest(f"too many texts (limit {config.max_texts})")
        return {"vectors": backend.embed_text(req.texts)}

    @app.post("/caption")
    def caption(req: CaptionRequest):
        image = _decode_image(req.image, config.max_image_bytes)
        return {"caption": backend.caption(image)}

    @app.post("/complete")
    def complete(req: CompleteRequest):
        if not req.system and not req.user:
            raise BadRequest("system and user must not both be empty")
        return {"text": backend.complete(req.system, req.user)}

    return app
