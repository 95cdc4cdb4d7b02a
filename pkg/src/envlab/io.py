"""Field serialization: flat binary + JSON header, CSV export, hashing."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .grid import Field, ProductGrid

__all__ = ["save_field", "load_field", "field_to_csv", "sha256_file", "write_json", "read_json"]

_AXIS_ORDER = "x1-fastest"


def save_field(f: Field, path: str | Path) -> tuple[Path, Path]:
    """Write ``path.bin`` (raw float64, x1 fastest) and ``path.json`` header."""
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    hdr_path = path.with_suffix(".json")
    g = f.grid
    # x1-fastest layout: transpose to (t, x2, x1) C-order before dumping
    bin_path.write_bytes(np.ascontiguousarray(f.values.transpose(2, 1, 0)).tobytes())
    header = {
        "shape": [g.nx1, g.nx2, g.nt],
        "spacing": [g.hx1, g.hx2, g.ht],
        "offset": g.offset,
        "axis_order": _AXIS_ORDER,
        "dtype": "float64",
    }
    write_json(header, hdr_path)
    return bin_path, hdr_path


def load_field(path: str | Path) -> Field:
    path = Path(path)
    header = read_json(path.with_suffix(".json"))
    if header.get("axis_order") != _AXIS_ORDER:
        raise ValueError(f"unsupported axis order {header.get('axis_order')!r}")
    nx1, nx2, nt = header["shape"]
    grid = ProductGrid(nx1, nx2, nt, bool(header["offset"]))
    raw = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype=np.float64)
    values = raw.reshape(nt, nx2, nx1).transpose(2, 1, 0).copy()
    return Field(grid, values, allow_neg_inf=True)


def field_to_csv(f: Field, path: str | Path) -> Path:
    """Columns x1, x2, t, value; row order follows x1-fastest layout."""
    path = Path(path)
    g = f.grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "t", "value"])
        x1, x2, t = g.x1, g.x2, g.t
        for k in range(g.nt):
            for j in range(g.nx2):
                for i in range(g.nx1):
                    writer.writerow([repr(x1[i]), repr(x2[j]), repr(t[k]), repr(f.values[i, j, k])])
    return path


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(obj, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, default=_coerce) + "\n")
    return path


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())


def _coerce(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")
