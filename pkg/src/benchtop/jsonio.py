"""Canonical JSON: sorted keys, compact separators, fixed 6-decimal floats.

Two serializations of equal values are byte-identical, which is what the
determinism contracts (byte-identical manifests, results, reports) rest on.
Floats are quantized to 6 decimals at value-creation time so that
deserialize(serialize(x)) == x and serialize is idempotent.
"""

from __future__ import annotations

import json
import math
from typing import Any


def quantize(value: float) -> float:
    """Round to 6 decimals and normalize -0.0 to 0.0."""
    q = round(float(value), 6)
    return 0.0 if q == 0 else q


def canonical_dumps(value: Any) -> str:
    out: list[str] = []
    _emit(value, out)
    return "".join(out)


def _emit(value: Any, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite float not serializable: {value!r}")
        out.append(f"{value:.6f}")
    elif isinstance(value, str):
        out.append(json.dumps(value))
    elif isinstance(value, dict):
        out.append("{")
        first = True
        for key in sorted(value):
            if not isinstance(key, str):
                raise ValueError(f"non-string key not serializable: {key!r}")
            if not first:
                out.append(",")
            first = False
            out.append(json.dumps(key))
            out.append(":")
            _emit(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    else:
        raise ValueError(f"unsupported type for canonical JSON: {type(value)!r}")
