"""Deterministic mock backends.

Every response is a pure function of the request bytes and the configured
seed: embeddings are unit vectors drawn from a generator seeded by a
content hash, captions key off the image's top-left tag pixel, and
completions are grammar-valid material lines synthesized from a lookup
table (semicolon-separated ``(name: low-high unit)`` items, the format the
engine's parser consumes).
"""

from __future__ import annotations

import hashlib
import io
import re

import numpy as np
from PIL import Image

_K_RE = re.compile(r"a list of (\d+)")

# caption table keyed by the image's (0, 0) tag pixel (red channel)
_CAPTIONS = {
    0: "a wooden table with metal legs",
    1: "a ceramic mug on a desk",
    2: "a fabric armchair with wooden feet",
    3: "a glass vase with a metal rim",
}
_DEFAULT_CAPTION = "a small household object on a white background"

# (name, low, high) per property kind; rows are cycled to satisfy any K
_DENSITY = [
    ("oak wood", 600, 900), ("pine wood", 350, 550), ("steel", 7700, 8000),
    ("plastic", 900, 1200), ("glass", 2400, 2800), ("aluminum", 2600, 2800),
    ("ceramic", 2200, 2600), ("fabric", 150, 400), ("foam", 30, 120),
    ("rubber", 1100, 1300), ("cast iron", 6900, 7300), ("copper", 8900, 8960),
    ("cardboard", 600, 800), ("bamboo", 500, 700), ("granite", 2600, 2800),
    ("leather", 800, 1000),
]
_FRICTION = [
    ("rubber", 0.7, 0.9), ("wood", 0.3, 0.5), ("polished metal", 0.15, 0.3),
    ("fabric", 0.4, 0.6), ("glass", 0.3, 0.4), ("plastic", 0.2, 0.4),
    ("ceramic", 0.3, 0.5), ("leather", 0.5, 0.7), ("foam", 0.6, 0.8),
    ("cardboard", 0.4, 0.5), ("stone", 0.5, 0.7), ("cork", 0.5, 0.6),
    ("paper", 0.3, 0.4), ("wax", 0.2, 0.3), ("steel", 0.2, 0.3),
    ("bamboo", 0.3, 0.5),
]
_HARDNESS = [
    ("rubber", 60, 80, "A"), ("plastic", 70, 85, "D"), ("wood", 50, 70, "D"),
    ("foam", 20, 40, "A"), ("glass", 85, 95, "D"), ("steel", 90, 100, "D"),
    ("fabric", 10, 30, "A"), ("leather", 60, 90, "A"), ("ceramic", 85, 95, "D"),
    ("cork", 30, 50, "A"), ("nylon", 70, 80, "D"), ("silicone", 40, 60, "A"),
    ("bamboo", 55, 70, "D"), ("pvc", 70, 90, "A"), ("acrylic", 90, 99, "D"),
    ("felt", 15, 35, "A"),
]
_YOUNGS = [
    ("steel", 190, 210), ("aluminum", 68, 72), ("oak wood", 9, 12),
    ("plastic", 2, 4), ("glass", 60, 75), ("rubber", 0.01, 0.1),
    ("ceramic", 200, 350), ("copper", 110, 130), ("pine wood", 8, 12),
    ("foam", 0.001, 0.01), ("carbon fiber", 180, 240), ("concrete", 25, 40),
    ("nylon", 2, 3), ("titanium", 100, 115), ("brass", 95, 110),
    ("bamboo", 15, 20),
]
_THERMAL = [
    ("steel", 40, 50), ("aluminum", 200, 240), ("wood", 0.1, 0.2),
    ("plastic", 0.1, 0.3), ("glass", 0.8, 1.2), ("copper", 380, 400),
    ("ceramic", 1.5, 3.5), ("fabric", 0.03, 0.07), ("foam", 0.02, 0.04),
    ("rubber", 0.1, 0.2), ("concrete", 1.0, 1.8), ("brass", 100, 125),
    ("cork", 0.03, 0.05), ("granite", 2.5, 3.5), ("titanium", 20, 23),
    ("leather", 0.1, 0.2),
]
_THICKNESS_CM = {
    "fabric": (0.1, 0.2), "plastic": (0.3, 1.0), "metal": (0.1, 0.2),
    "ceramic": (0.2, 0.5), "glass": (0.3, 0.8), "wood": (1.0, 2.0),
    "oak wood": (1.0, 2.0), "pine wood": (1.0, 2.0), "steel": (0.1, 0.2),
    "aluminum": (0.1, 0.3), "foam": (5.0, 15.0), "rubber": (0.3, 1.0),
    "leather": (0.2, 0.5), "cardboard": (0.2, 0.5),
}
_DEFAULT_THICKNESS = (0.5, 1.0)

_KIND_MARKERS = [
    ("mass densities", _DENSITY, "kg/m^3"),
    ("friction coefficient", _FRICTION, ""),
    ("Shore A hardness", _HARDNESS, None),
    ("thickness (in cm)", None, "cm"),
    ("Young's modulus", _YOUNGS, "GPa"),
    ("thermal conductivity", _THERMAL, "W/mK"),
]

# caption keyword -> preferred density rows (index into _DENSITY)
_CAPTION_HINTS = [
    ("wooden table", [0, 1, 2, 3, 4]),
    ("mug", [6, 7, 4, 3, 0]),
    ("armchair", [7, 8, 0, 2, 3]),
]


def _fmt(x) -> str:
    return repr(int(x)) if float(x).is_integer() else repr(float(x))


def _render(rows, unit) -> str:
    parts = []
    for row in rows:
        name, lo, hi = row[0], row[1], row[2]
        value = _fmt(lo) if lo == hi else f"{_fmt(lo)}-{_fmt(hi)}"
        if unit is None:  # hardness rows carry a Shore tag
            parts.append(f"({name}: {value}, Shore {row[3]})")
        elif unit:
            parts.append(f"({name}: {value} {unit})")
        else:
            parts.append(f"({name}: {value})")
    return ";".join(parts)


class MockBackend:
    """Seeded, stateless mock for all four endpoints."""

    def __init__(self, dim: int = 512, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def _vector_from_bytes(self, payload: bytes) -> list[float]:
        digest = hashlib.sha256(self.seed.to_bytes(8, "little") + payload).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.normal(size=self.dim)
        return (v / np.linalg.norm(v)).tolist()

    def _decode(self, image_bytes: bytes) -> np.ndarray:
        return np.asarray(Image.open(io.BytesIO(image_bytes)).convert("RGB"))

    def embed_patches(self, image_bytes: bytes, centers, patch: int) -> list[list[float]]:
        img = self._decode(image_bytes)
        h, w = img.shape[:2]
        half = patch // 2
        out = []
        for u, v in centers:
            u = min(max(int(u), 0), w - 1)
            v = min(max(int(v), 0), h - 1)
            window = img[max(0, v - half):min(h, v + half + 1),
                         max(0, u - half):min(w, u + half + 1)]
            out.append(self._vector_from_bytes(window.tobytes()))
        return out

    def embed_text(self, texts) -> list[list[float]]:
        return [self._vector_from_bytes(t.encode()) for t in texts]

    def caption(self, image_bytes: bytes) -> str:
        img = self._decode(image_bytes)
        tag = int(img[0, 0, 0])
        return _CAPTIONS.get(tag, _DEFAULT_CAPTION)

    def complete(self, system: str, user: str) -> str:
        m = _K_RE.search(system)
        k = int(m.group(1)) if m else 5
        for marker, table, unit in _KIND_MARKERS:
            if marker in system:
                if table is None:
                    return self._thickness_reply(user, k)
                rows = self._pick_rows(table, user, k)
                return _render(rows, unit)
        return _render(self._pick_rows(_DENSITY, user, k), "kg/m^3")

    def _pick_rows(self, table, user: str, k: int):
        order = list(range(len(table)))
        for keyword, hint in _CAPTION_HINTS:
            if keyword in user:
                order = hint + [i for i in order if i not in hint]
                break
        rows = [table[order[i % len(table)]] for i in range(k)]
        # K beyond the table cycles with disambiguated names
        seen = {}
        unique = []
        for row in rows:
            name = row[0]
            if name in seen:
                seen[name] += 1
                row = (f"{name} variant {seen[name]}", *row[1:])
            else:
                seen[name] = 1
            unique.append(row)
        return unique

    def _thickness_reply(self, user: str, k: int) -> str:
        m = re.search(r'Materials:\s*"([^"]*)"', user)
        names = [n.strip() for n in m.group(1).split(",")] if m else []
        while len(names) < k:
            names.append(f"material {len(names) + 1}")
        rows = [(n, *_THICKNESS_CM.get(n.casefold(), _DEFAULT_THICKNESS))
                for n in names[:k]]
        return _render(rows, "cm")
