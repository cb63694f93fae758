"""Reference constants for figure overlays.

Overlay values are never hand-typed per figure: they are loaded from the
constants.json the simulation side writes next to its CSV artifacts, so both
components share one source of truth.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

REQUIRED_KEYS = (
    "pole_coef_d3",
    "log_coef_d2",
    "variance_slope_d3",
    "second_order_scale",
    "second_order_limit",
)


class ConstantsError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceConstants:
    pole_coef_d3: float
    log_coef_d2: float
    variance_slope_d3: float
    second_order_scale: float
    second_order_limit: float


def load(path: str) -> ReferenceConstants:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConstantsError(f"cannot read constants file {path}: {exc}")
    missing = [k for k in REQUIRED_KEYS if k not in payload]
    if missing:
        raise ConstantsError(f"constants file {path} is missing {missing}")
    return ReferenceConstants(**{k: float(payload[k]) for k in REQUIRED_KEYS})
