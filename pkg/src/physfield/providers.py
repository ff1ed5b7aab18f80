"""Model providers behind the pipeline: patch/text embedding, captioning,
and chat completion.

Three interchangeable backends:
  * mock  - deterministic vectors derived from synthetic scene ground truth
            (see synthetic.make_mock_providers)
  * file  - precomputed vectors and replies read from a provider directory
  * http  - a model sidecar speaking the JSON-over-HTTP contract

All backends expose the same four methods::

    embed_patches(frame_index, centers, patch_size) -> (n, D) array
    embed_text(texts) -> (len(texts), D) array
    caption(frame_index) -> str
    complete(system, user) -> str
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import struct
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

PATCH_FILE_MAGIC = b"PFPB"
PATCH_FILE_VERSION = 1


class ProviderError(RuntimeError):
    """Backend failure (missing precomputed entry, HTTP error, bad payload)."""


class ModelProvider(Protocol):
    def embed_patches(self, frame_index: int, centers, patch_size: int): ...
    def embed_text(self, texts: Sequence[str]): ...
    def caption(self, frame_index: int) -> str: ...
    def complete(self, system: str, user: str) -> str: ...


def completion_key(system: str, user: str) -> str:
    """Stable lookup key for a (system, user) completion request."""
    digest = hashlib.sha256()
    digest.update(system.encode())
    digest.update(b"\x00")
    digest.update(user.encode())
    return digest.hexdigest()[:16]


def write_patch_file(path: str | Path, feature_dim: int,
                     records: dict[tuple[int, int, int], np.ndarray]) -> None:
    """Write the (frame, u, v) -> vector sidecar file for offline runs."""
    with open(path, "wb") as fh:
        fh.write(PATCH_FILE_MAGIC)
        fh.write(struct.pack("<IIQ", PATCH_FILE_VERSION, feature_dim, len(records)))
        for (f, u, v) in sorted(records):
            fh.write(struct.pack("<iii", f, u, v))
            fh.write(np.ascontiguousarray(records[(f, u, v)], dtype="<f4").tobytes())


def read_patch_file(path: str | Path) -> tuple[int, dict[tuple[int, int, int], np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PATCH_FILE_MAGIC:
            raise ProviderError(f"{path}: not a patch vector file")
        version, dim, count = struct.unpack("<IIQ", fh.read(16))
        if version != PATCH_FILE_VERSION:
            raise ProviderError(f"{path}: unsupported version {version}")
        records = {}
        rec = struct.Struct("<iii")
        for _ in range(count):
            f, u, v = rec.unpack(fh.read(12))
            vec = np.frombuffer(fh.read(4 * dim), dtype="<f4").astype(np.float64)
            records[(f, u, v)] = vec
    return dim, records


class FileProviders:
    """Offline provider reading precomputed artifacts from a directory:

    patches.bin        (frame, u, v) -> vector records (write_patch_file)
    text_embeddings.json   {text: [D floats]}
    captions.json          {"<frame index>" or "default": caption}
    completions.json       {completion_key(system, user): reply}
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        patch_path = self.root / "patches.bin"
        if not patch_path.is_file():
            raise ProviderError(f"missing patch vector file: {patch_path}")
        self.feature_dim, self._patches = read_patch_file(patch_path)
        self._texts = self._load_json("text_embeddings.json", default={})
        self._captions = self._load_json("captions.json", default={})
        self._completions = self._load_json("completions.json", default={})

    def _load_json(self, name: str, default):
        path = self.root / name
        if not path.is_file():
            return default
        with open(path) as fh:
            return json.load(fh)

    def embed_patches(self, frame_index: int, centers, patch_size: int) -> np.ndarray:
        out = np.empty((len(centers), self.feature_dim))
        for i, (u, v) in enumerate(np.asarray(centers, dtype=np.int64)):
            key = (int(frame_index), int(u), int(v))
            if key not in self._patches:
                raise ProviderError(f"no precomputed vector for frame={key[0]} u={key[1]} v={key[2]}")
            out[i] = self._patches[key]
        return out

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        out = []
        for t in texts:
            if t not in self._texts:
                raise ProviderError(f"no precomputed embedding for text {t!r}")
            out.append(np.asarray(self._texts[t], dtype=np.float64))
        return np.stack(out)

    def caption(self, frame_index: int) -> str:
        key = str(int(frame_index))
        if key in self._captions:
            return self._captions[key]
        if "default" in self._captions:
            return self._captions["default"]
        raise ProviderError(f"no precomputed caption for frame {frame_index}")

    def complete(self, system: str, user: str) -> str:
        key = completion_key(system, user)
        if key not in self._completions:
            raise ProviderError(f"no precomputed completion for request key {key}")
        return self._completions[key]


class HttpProviders:
    """Client for the model sidecar's JSON endpoints."""

    def __init__(self, endpoint: str, bundle=None, timeout: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.bundle = bundle
        self.timeout = timeout
        self._png_cache: dict[int, str] = {}

    def _post(self, route: str, payload: dict) -> dict:
        import requests

        try:
            resp = requests.post(f"{self.endpoint}{route}", json=payload,
                                 timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderError(f"sidecar unreachable at {self.endpoint}{route}: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(f"{route} returned {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def _frame_png(self, frame_index: int) -> str:
        if frame_index not in self._png_cache:
            if self.bundle is None:
                raise ProviderError("http provider needs a scene bundle for image requests")
            from PIL import Image

            buf = io.BytesIO()
            Image.fromarray(self.bundle.frames[frame_index].image).save(buf, format="PNG")
            self._png_cache[frame_index] = base64.b64encode(buf.getvalue()).decode()
        return self._png_cache[frame_index]

    def embed_patches(self, frame_index: int, centers, patch_size: int) -> np.ndarray:
        payload = {
            "image": self._frame_png(frame_index),
            "centers": [[int(u), int(v)] for u, v in np.asarray(centers, dtype=np.int64)],
            "patch": int(patch_size),
        }
        data = self._post("/embed_patches", payload)
        return np.asarray(data["vectors"], dtype=np.float64)

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        data = self._post("/embed_text", {"texts": list(texts)})
        return np.asarray(data["vectors"], dtype=np.float64)

    def caption(self, frame_index: int) -> str:
        data = self._post("/caption", {"image": self._frame_png(frame_index)})
        return data["caption"]

    def complete(self, system: str, user: str) -> str:
        data = self._post("/complete", {"system": system, "user": user})
        return data["text"]
