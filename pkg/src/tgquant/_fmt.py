"""JSON/CSV number formatting shared by reports and the CLI."""

from __future__ import annotations

import json
import math

import numpy as np

SIG_DIGITS = 9


def round_sig(value):
    """Recursively round floats to 9 significant digits; NaN/Inf become None."""
    if isinstance(value, dict):
        return {k: round_sig(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_sig(v) for v in value]
    if isinstance(value, np.ndarray):
        return [round_sig(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return float(f"{value:.{SIG_DIGITS}g}")
    return value


def dumps(obj) -> str:
    return json.dumps(round_sig(obj), indent=2, sort_keys=False) + "\n"
