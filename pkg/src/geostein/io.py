"""Sample CSV files and JSON reports.

CSV layout::

    # manifold=<kind>;n=<dim>
    <coord>,<coord>,...
    ...

One row per point in model coordinates (a sphere in R^{n+1} has n+1 columns,
a circle a single column of angles). Floats in both formats are written with
17 significant digits, enough to round-trip every double.
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import ManifoldSpec
from .sampling import SampleSet

_HEADER = re.compile(r"^# manifold=([a-z]+);n=(\d+)$")


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def write_samples_csv(s: SampleSet, path) -> Path:
    path = Path(path)
    lines = [f"# manifold={s.manifold.kind};n={s.manifold.dim}"]
    lines += [",".join(fmt_float(v) for v in row) for row in np.asarray(s.points)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_samples_csv(path) -> SampleSet:
    """Read a sample file; the manifold comes back unrestricted."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise ConfigError(f"{path} is empty", "")
    m = _HEADER.match(text[0].strip())
    if not m:
        raise ConfigError(f"{path}: bad header {text[0]!r}", "")
    spec = ManifoldSpec(m.group(1), int(m.group(2)))
    rows = [r for r in text[1:] if r.strip()]
    D = spec.ambient_dim
    pts = np.array([[float(v) for v in r.split(",")] for r in rows], dtype=float).reshape(-1, D)
    spec.model.check_points(pts)
    return SampleSet(spec, pts, {"source": str(path)})


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in seq) \
            + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        s = fmt_float(x)
        # keep integral floats recognisable as floats
        return s if any(c in s for c in ".en") else s + ".0"
    return json.dumps(obj)


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float printed to 17 significant digits; NaN and inf become null."""
    return _encode(obj, indent, 0) + "\n"


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path
