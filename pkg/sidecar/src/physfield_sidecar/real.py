"""Real-model backends: CLIP-style encoders and a BLIP-style captioner via
transformers, plus an OpenAI-compatible chat endpoint for completions.

Models load lazily on first use; anything missing (packages, weights,
API keys) surfaces as a RealBackendError, which the app maps to 502.
"""

from __future__ import annotations

import io
import os

import numpy as np


class RealBackendError(RuntimeError):
    pass


class RealBackend:
    def __init__(self, dim: int, clip_model: str, caption_model: str,
                 completion_model: str, completion_endpoint: str):
        self.dim = dim
        self.clip_model_id = clip_model
        self.caption_model_id = caption_model
        self.completion_model = completion_model
        self.completion_endpoint = completion_endpoint
        self._clip = None
        self._captioner = None

    def _load_clip(self):
        if self._clip is not None:
            return
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor

            model = CLIPModel.from_pretrained(self.clip_model_id)
            model.eval()
            processor = CLIPProcessor.from_pretrained(self.clip_model_id)
            self._clip = (model, processor, torch)
        except Exception as exc:
            raise RealBackendError(f"cannot load CLIP backend: {exc}") from exc

    def _load_captioner(self):
        if self._captioner is not None:
            return
        try:
            from transformers import pipeline

            self._captioner = pipeline("image-to-text", model=self.caption_model_id)
        except Exception as exc:
            raise RealBackendError(f"cannot load caption backend: {exc}") from exc

    def _pil(self, image_bytes: bytes):
        from PIL import Image

        return Image.open(io.BytesIO(image_bytes)).convert("RGB")

    def embed_patches(self, image_bytes: bytes, centers, patch: int):
        self._load_clip()
        model, processor, torch = self._clip
        img = self._pil(image_bytes)
        w, h = img.size
        half = patch // 2
        crops = []
        for u, v in centers:
            u = min(max(int(u), 0), w - 1)
            v = min(max(int(v), 0), h - 1)
            crops.append(img.crop((max(0, u - half), max(0, v - half),
                                   min(w, u + half + 1), min(h, v + half + 1))))
        with torch.no_grad():
            inputs = processor(images=crops, return_tensors="pt")
            feats = model.get_image_features(**inputs)
            feats = feats / feats.norm(dim=-1, keepdim=True)
        vecs = feats.cpu().numpy().astype(np.float64)
        if vecs.shape[1] != self.dim:
            raise RealBackendError(
                f"model produces {vecs.shape[1]}-d features, configured dim is {self.dim}")
        return [v.tolist() for v in vecs]

    def embed_text(self, texts):
        self._load_clip()
        model, processor, torch = self._clip
        with torch.no_grad():
            inputs = processor(text=list(texts), return_tensors="pt", padding=True)
            feats = model.get_text_features(**inputs)
            feats = feats / feats.norm(dim=-1, keepdim=True)
        vecs = feats.cpu().numpy().astype(np.float64)
        if vecs.shape[1] != self.dim:
            raise RealBackendError(
                f"model produces {vecs.shape[1]}-d features, configured dim is {self.dim}")
        return [v.tolist() for v in vecs]

    def caption(self, image_bytes: bytes) -> str:
        self._load_captioner()
        result = self._captioner(self._pil(image_bytes))
        try:
            return result[0]["generated_text"].strip()
        except (KeyError, IndexError, TypeError) as exc:
            raise RealBackendError(f"unexpected captioner output: {result!r}") from exc

    def complete(self, system: str, user: str) -> str:
        import requests

        key = os.environ.get("SIDECAR_COMPLETION_API_KEY", "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.completion_model,
            "messages": [{"role": "system", "content": system},
                         {"role": "user", "content": user}],
            "temperature": 0.0,
        }
        try:
            resp = requests.post(f"{self.completion_endpoint}/chat/completions",
                                 json=payload, headers=headers, timeout=120)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:
            raise RealBackendError(f"completion request failed: {exc}") from exc
