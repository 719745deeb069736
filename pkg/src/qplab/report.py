"""Deterministic JSON/CSV emission shared by the experiment drivers.

Floats are written with 17 significant digits so that a file re-read and
re-written is byte-identical; keys keep insertion order.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

__all__ = ["ExperimentReport", "fmt_float", "to_jsonable", "dumps", "write_json", "write_csv"]


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def to_jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays, complex numbers and dataclasses into JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if hasattr(obj, "__dataclass_fields__"):
        return {k: to_jsonable(getattr(obj, k)) for k in obj.__dataclass_fields__}
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


_MARK = "\u0001F"


def dumps(obj: Any, indent: int | None = 2) -> str:
    """Serialize to JSON text with every float rendered by :func:`fmt_float`.

    The stdlib encoder always uses ``float.__repr__``, so floats are first
    replaced by marked strings and the quotes are stripped afterwards.
    """

    def mark(o):
        if isinstance(o, dict):
            return {k: mark(v) for k, v in o.items()}
        if isinstance(o, list):
            return [mark(v) for v in o]
        if isinstance(o, float):
            return _MARK + fmt_float(o) + _MARK
        return o

    text = json.dumps(mark(to_jsonable(obj)), indent=indent, ensure_ascii=True)
    token = json.dumps(_MARK)[1:-1]  # the escaped form of the marker
    return text.replace('"' + token, "").replace(token + '"', "")


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n", encoding="utf-8")
    return path


def _cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if isinstance(v, (complex, np.complexfloating)):
        return f"{fmt_float(v.real)}{'+' if v.imag >= 0 else '-'}{fmt_float(abs(v.imag))}j"
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_cell(x) for x in v)
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


@dataclass
class ExperimentReport:
    """Structured result of one experiment with its provenance metadata."""

    kind: str
    config: dict
    summary: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    status: str = "ok"

    def as_dict(self) -> dict:
        from . import __version__

        return {
            "kind": self.kind,
            "version": __version__,
            "status": self.status,
            "config": self.config,
            "summary": self.summary,
            "checks": self.checks,
        }
