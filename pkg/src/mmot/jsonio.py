"""JSON helpers: infinite values travel as the string ``"inf"``."""

import json
import math
from pathlib import Path

import numpy as np

INF_TOKEN = "inf"


def to_jsonable(obj):
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
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return INF_TOKEN if x > 0 else "-" + INF_TOKEN
        return x
    return obj


def parse_real(value):
    """Inverse of the float handling in :func:`to_jsonable`."""
    if isinstance(value, str):
        token = value.strip().lower()
        if token in ("inf", "+inf", "infinity"):
            return math.inf
        if token in ("-inf", "-infinity"):
            return -math.inf
        if token == "nan":
            return math.nan
        return float(token)
    return float(value)


def dumps(obj):
    # repr-based float output round-trips exactly (17 significant digits max)
    return json.dumps(to_jsonable(obj), indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())
