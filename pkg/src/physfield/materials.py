"""Material dictionaries: canonical-view selection, prompt rendering, the
completion-reply grammar, thickness attachment, and the combined Shore
hardness scale.

The reply grammar is a semicolon-separated list of parenthesized items,

    (name: low-high unit) ;  (name: value unit) ;  (name: low-high, Shore A)

with ':' or ',' accepted between name and value, hyphen or en-dash as the
range separator, and unit spellings normalized loosely (kg/m3, kg/m^3 and
the unicode superscript all pass). Parsing is strict about structure:
wrong item counts, empty names, non-numeric values, and inverted ranges
all raise with the offending fragment in the message.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

PROPERTY_KINDS = (
    "mass_density", "friction", "hardness",
    "youngs_modulus", "thermal_conductivity", "custom",
)

# per-kind canonical units, format-example item pattern, and accepted
# normalized unit spellings (None = anything goes, e.g. dimensionless)
_KIND_INFO = {
    "mass_density": ("kg/m^3", "(material {i}: low-high kg/m^3)", {"kg/m3"}),
    "friction": ("", "(material {i}: low-high)", None),
    "hardness": ("Shore", "(material {i}: low-high, <Shore A or Shore D>)", None),
    "youngs_modulus": ("GPa", "(material {i}: low-high GPa)", {"gpa"}),
    "thermal_conductivity": ("W/mK", "(material {i}: low-high W/mK)", {"w/mk"}),
    "thickness": ("cm", "(material {i}: low-high cm)", {"cm"}),
    "custom": ("", "(material {i}: low-high)", None),
}

DEFAULT_K = {"mass_density": 5, "friction": 3, "hardness": 3,
             "youngs_modulus": 5, "thermal_conductivity": 5, "custom": 5}

DEFAULT_RETRIES = 3

_NUM = r"\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"
_RANGE_RE = re.compile(rf"^\s*(?P<low>{_NUM})(?:\s*[-–—]\s*(?P<high>{_NUM}))?")
_SHORE_RE = re.compile(r"[,;]?\s*<?\s*shore\s*([ad])\s*>?\s*$", re.IGNORECASE)


class MaterialParseError(ValueError):
    """A completion reply fragment that does not match the grammar."""


class UnparseableResponseError(RuntimeError):
    """Reply stayed unparseable after all retries; carries the raw text."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


@dataclass(frozen=True)
class ValueRange:
    low: float
    high: float

    def __post_init__(self):
        if self.low > self.high:
            raise ValueError(f"inverted range ({self.low}, {self.high})")

    def midpoint(self) -> float:
        return (self.low + self.high) / 2.0


@dataclass(frozen=True)
class MaterialEntry:
    name: str
    value: ValueRange
    thickness_cm: Optional[ValueRange] = None
    shore_scale: Optional[str] = None  # "A" | "D"

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError("material name must be non-empty")
        if self.shore_scale not in (None, "A", "D"):
            raise ValueError(f"shore_scale must be A or D, got {self.shore_scale!r}")
        if self.thickness_cm is not None and self.thickness_cm.low < 0:
            raise ValueError(f"{self.name}: thickness cannot be negative")


@dataclass(frozen=True)
class MaterialDictionary:
    property_kind: str
    units: str
    caption: str
    entries: tuple[MaterialEntry, ...]

    def __post_init__(self):
        if self.property_kind not in PROPERTY_KINDS:
            raise ValueError(f"unknown property kind {self.property_kind!r}")
        object.__setattr__(self, "entries", tuple(self.entries))
        k = len(self.entries)
        if not 1 <= k <= 16:
            raise ValueError(f"dictionary must hold 1..16 materials, got {k}")
        names = [e.name.casefold() for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("material names must be unique (case-insensitive)")
        if self.property_kind == "mass_density":
            for e in self.entries:
                if not e.value.low > 0:
                    raise ValueError(f"{e.name}: density must be positive")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def midpoints(self) -> np.ndarray:
        return np.array([e.value.midpoint() for e in self.entries])

    def thickness_midpoints_cm(self) -> np.ndarray:
        vals = []
        for e in self.entries:
            if e.thickness_cm is None:
                raise ValueError(f"{e.name}: no thickness estimate attached")
            vals.append(e.thickness_cm.midpoint())
        return np.array(vals)

    @property
    def has_thickness(self) -> bool:
        return all(e.thickness_cm is not None for e in self.entries)


def canonical_units(kind: str) -> str:
    return _KIND_INFO[kind][0]


def load_prompt(name: str) -> str:
    ref = resources.files("physfield") / "prompts" / f"{name}.txt"
    return ref.read_text().rstrip("\n")


def render_proposal_prompt(kind: str, k: int) -> str:
    """System prompt asking for k candidate materials of the given kind."""
    if kind == "custom":
        raise ValueError("custom properties need a caller-supplied prompt")
    template = load_prompt(kind)
    pattern = _KIND_INFO[kind][1]
    format_line = ";".join(pattern.format(i=i) for i in range(1, k + 1))
    return template.format(k=k, format_line=format_line)


def captioning_prompt() -> str:
    return load_prompt("captioning")


def _normalize_unit(text: str) -> str:
    text = text.strip().strip(".,;")
    text = text.replace("$", "").replace("^", "").replace(" ", "")
    text = text.replace("³", "3").replace("²", "2")
    return text.lower()


def _parse_item(fragment: str, kind: str) -> MaterialEntry:
    item = fragment.strip()
    if item.startswith("(") and item.endswith(")"):
        item = item[1:-1].strip()
    if ":" in item:
        name, rest = item.split(":", 1)
    elif "," in item:
        name, rest = item.split(",", 1)
    else:
        raise MaterialParseError(f"no name/value separator in {fragment!r}")
    name = name.strip()
    if not name:
        raise MaterialParseError(f"empty material name in {fragment!r}")

    shore = None
    m = _SHORE_RE.search(rest)
    if m:
        shore = m.group(1).upper()
        rest = rest[:m.start()]
    if kind == "hardness" and shore is None:
        raise MaterialParseError(f"missing Shore A/D tag in {fragment!r}")

    m = _RANGE_RE.match(rest)
    if not m:
        raise MaterialParseError(f"no numeric value in {fragment!r}")
    low = float(m.group("low"))
    high = float(m.group("high")) if m.group("high") else low
    if low > high:
        raise MaterialParseError(f"inverted range in {fragment!r}")

    unit = rest[m.end():].strip()
    accepted = _KIND_INFO[kind][2]
    if accepted is not None and unit and _normalize_unit(unit) not in accepted:
        raise MaterialParseError(f"unexpected unit {unit!r} in {fragment!r}")

    return MaterialEntry(name=name, value=ValueRange(low, high), shore_scale=shore)


def parse_material_response(text: str, expected_k: int, kind: str) -> list[MaterialEntry]:
    """Parse a completion reply into material entries.

    Raises MaterialParseError on a wrong item count or any malformed item.
    """
    fragments = [f for f in (p.strip() for p in text.strip().split(";")) if f]
    if len(fragments) != expected_k:
        raise MaterialParseError(
            f"expected {expected_k} materials, found {len(fragments)} in {text!r}"
        )
    return [_parse_item(f, kind) for f in fragments]


def _format_value(v: float) -> str:
    return repr(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


def render_entries(entries: Sequence[MaterialEntry], kind: str,
                   thickness: bool = False) -> str:
    """Format entries in the canonical reply grammar (inverse of parsing)."""
    unit = canonical_units("thickness" if thickness else kind)
    if kind == "hardness" and not thickness:
        unit = ""
    parts = []
    for e in entries:
        rng = e.thickness_cm if thickness else e.value
        if rng is None:
            raise ValueError(f"{e.name}: no thickness to render")
        if rng.low == rng.high:
            value = _format_value(rng.low)
        else:
            value = f"{_format_value(rng.low)}-{_format_value(rng.high)}"
        suffix = f" {unit}" if unit else ""
        if kind == "hardness" and not thickness:
            suffix = f", Shore {e.shore_scale}"
        parts.append(f"({e.name}: {value}{suffix})")
    return ";".join(parts)


def select_canonical_view(bundle, seed: int = 0) -> int:
    """Pick the frame used for captioning.

    With masks: frames sorted by mask area ascending, index
    floor(0.75 * (n - 1)). Without masks: a seeded uniform draw.
    """
    n = len(bundle.frames)
    if bundle.has_masks:
        areas = np.array([int(f.mask.sum()) for f in bundle.frames])
        order = np.argsort(areas, kind="stable")
        idx = int(np.floor(0.75 * (n - 1)))
        if n >= 2:
            idx = max(idx, 1)  # the smallest-area view is never informative
        return int(order[idx])
    rng = np.random.default_rng(seed)
    return int(rng.integers(0, n))


def _complete_with_retries(provider, system: str, user: str, expected_k: int,
                           kind: str, retries: int) -> list[MaterialEntry]:
    attempt_user = user
    last_error = None
    raw = ""
    for _ in range(retries):
        raw = provider.complete(system, attempt_user)
        try:
            return parse_material_response(raw, expected_k, kind)
        except MaterialParseError as exc:
            last_error = exc
            attempt_user = (
                f"{user}\nYour previous answer could not be parsed ({exc}). "
                f"Answer again, following the format requirement exactly."
            )
    raise UnparseableResponseError(
        f"reply unparseable after {retries} attempts: {last_error}", raw_text=raw
    )


def propose_materials(caption: str, kind: str, k: int, provider,
                      retries: int = DEFAULT_RETRIES) -> MaterialDictionary:
    """Ask the completion provider for k candidate materials with values."""
    if not caption.strip():
        raise ValueError("caption must be non-empty")
    system = render_proposal_prompt(kind, k)
    user = f'"{caption}"'
    entries = _complete_with_retries(provider, system, user, k, kind, retries)
    return MaterialDictionary(property_kind=kind, units=canonical_units(kind),
                              caption=caption, entries=tuple(entries))


def estimate_thickness(caption: str, dictionary: MaterialDictionary, provider,
                       retries: int = DEFAULT_RETRIES) -> MaterialDictionary:
    """Attach per-material thickness ranges (cm), one per entry in order."""
    if dictionary.has_thickness:
        raise ValueError("dictionary already has thickness estimates")
    k = len(dictionary)
    system = render_proposal_prompt("thickness", k)
    names = ", ".join(dictionary.names)
    user = f'Caption: "{caption}" Materials: "{names}"'
    parsed = _complete_with_retries(provider, system, user, k, "thickness", retries)
    entries = tuple(
        replace(e, thickness_cm=p.value)
        for e, p in zip(dictionary.entries, parsed)
    )
    return replace(dictionary, entries=entries)


def propose_values_for(caption: str, names: Sequence[str], kind: str, provider,
                       retries: int = DEFAULT_RETRIES) -> MaterialDictionary:
    """Ask for property values of an already-fixed material list.

    Used for the kinds whose prompts take the candidate materials as input
    (Young's modulus, thermal conductivity); values attach to the given
    names in order.
    """
    k = len(names)
    system = render_proposal_prompt(kind, k)
    user = f'Caption: "{caption}" Materials: "{", ".join(names)}"'
    parsed = _complete_with_retries(provider, system, user, k, kind, retries)
    entries = tuple(
        MaterialEntry(name=name, value=p.value, shore_scale=p.shore_scale)
        for name, p in zip(names, parsed)
    )
    return MaterialDictionary(property_kind=kind, units=canonical_units(kind),
                              caption=caption, entries=entries)


def combine_shore_scales(entries: Sequence[MaterialEntry]) -> list[MaterialEntry]:
    """Map Shore A/D readings onto the single 0-200 scale (D offset by +100)."""
    out = []
    for e in entries:
        if e.shore_scale == "A":
            out.append(e)
        elif e.shore_scale == "D":
            shifted = ValueRange(e.value.low + 100.0, e.value.high + 100.0)
            out.append(replace(e, value=shifted))
        else:
            raise ValueError(f"{e.name}: hardness entry lacks a Shore A/D tag")
    return out


def save_dictionary(dictionary: MaterialDictionary, path: str | Path) -> None:
    payload = {
        "property": dictionary.property_kind,
        "units": dictionary.units,
        "caption": dictionary.caption,
        "materials": [
            {
                "name": e.name,
                "low": e.value.low,
                "high": e.value.high,
                "thickness_low_cm": e.thickness_cm.low if e.thickness_cm else None,
                "thickness_high_cm": e.thickness_cm.high if e.thickness_cm else None,
                "shore": e.shore_scale,
            }
            for e in dictionary.entries
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dictionary(path: str | Path) -> MaterialDictionary:
    with open(path) as fh:
        payload = json.load(fh)
    entries = []
    for rec in payload["materials"]:
        thickness = None
        if rec.get("thickness_low_cm") is not None:
            thickness = ValueRange(rec["thickness_low_cm"], rec["thickness_high_cm"])
        entries.append(MaterialEntry(
            name=rec["name"],
            value=ValueRange(rec["low"], rec["high"]),
            thickness_cm=thickness,
            shore_scale=rec.get("shore"),
        ))
    return MaterialDictionary(
        property_kind=payload["property"], units=payload["units"],
        caption=payload["caption"], entries=tuple(entries),
    )
