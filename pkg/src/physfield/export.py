"""PLY export/import for point clouds carrying per-vertex RGB and a scalar
``value`` property, plus value-to-color mapping for viewers.

Binary files are little-endian with double-precision coordinates and
values, so a write/read cycle reproduces the arrays bit-exactly; ASCII
mode uses round-trip-safe float formatting.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_HEADER = """ply
format {fmt} 1.0
element vertex {count}
property double x
property double y
property double z
property uchar red
property uchar green
property uchar blue
property double value
end_header
"""


def value_colormap(values: np.ndarray, cmap_name: str = "viridis") -> np.ndarray:
    """Map scalars to uint8 RGB; the minimum lands on the colormap's low
    end, the maximum on its high end (constant fields map to the low end)."""
    import matplotlib

    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    t = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    cmap = matplotlib.colormaps[cmap_name]
    return (np.asarray(cmap(t))[:, :3] * 255).round().astype(np.uint8)


def write_ply(path: str | Path, points: np.ndarray, colors: np.ndarray,
              values: np.ndarray, binary: bool = True) -> None:
    pts = np.asarray(points, dtype="<f8").reshape(-1, 3)
    cols = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    vals = np.asarray(values, dtype="<f8").reshape(-1)
    if not (pts.shape[0] == cols.shape[0] == vals.shape[0]):
        raise ValueError(
            f"length mismatch: {pts.shape[0]} points, {cols.shape[0]} colors, "
            f"{vals.shape[0]} values"
        )
    fmt = "binary_little_endian" if binary else "ascii"
    header = _HEADER.format(fmt=fmt, count=pts.shape[0])
    if binary:
        rec = np.dtype([("xyz", "<f8", 3), ("rgb", "u1", 3), ("value", "<f8")])
        data = np.empty(pts.shape[0], dtype=rec)
        data["xyz"] = pts
        data["rgb"] = cols
        data["value"] = vals
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(data.tobytes())
    else:
        with open(path, "w") as fh:
            fh.write(header)
            for p, c, v in zip(pts, cols, vals):
                fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} "
                         f"{c[0]} {c[1]} {c[2]} {float(v)!r}\n")


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a PLY written by write_ply; returns (points, colors, values)."""
    with open(path, "rb") as fh:
        header_lines = []
        while True:
            line = fh.readline().decode("ascii").strip()
            header_lines.append(line)
            if line == "end_header":
                break
        fmt = next(l.split()[1] for l in header_lines if l.startswith("format"))
        count = int(next(l.split()[2] for l in header_lines
                         if l.startswith("element vertex")))
        if fmt == "binary_little_endian":
            rec = np.dtype([("xyz", "<f8", 3), ("rgb", "u1", 3), ("value", "<f8")])
            data = np.frombuffer(fh.read(rec.itemsize * count), dtype=rec)
            return (data["xyz"].astype(np.float64).reshape(-1, 3),
                    data["rgb"].astype(np.uint8).reshape(-1, 3),
                    data["value"].astype(np.float64).reshape(-1))
        pts = np.empty((count, 3))
        cols = np.empty((count, 3), dtype=np.uint8)
        vals = np.empty(count)
        for i in range(count):
            parts = fh.readline().split()
            pts[i] = [float(x) for x in parts[:3]]
            cols[i] = [int(x) for x in parts[3:6]]
            vals[i] = float(parts[6])
        return pts, cols, vals
