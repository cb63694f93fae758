"""Shared numeric constants of the occupation-density asymptotics.

Every reference value used by experiment verdicts and figure overlays is
declared here once and exported as JSON alongside run artifacts, so that
downstream consumers never hand-type them.
"""
from __future__ import annotations

import json
import math
import os

# Coefficient of the 1/|x| pole of the Newtonian potential in d=3: the
# deterministic part subtracted from the occupation density near the origin.
POLE_COEF_D3 = 1.0 / (2.0 * math.pi)

# Coefficient of log(1/|x|) in the d=2 renormalization.
LOG_COEF_D2 = 1.0 / math.pi

# Slope of Var(occupation density) against log(1/|x|) in d=3: 2 * (pole coef)^2.
VARIANCE_SLOPE_D3 = 2.0 * POLE_COEF_D3**2

# Scale of the second-order term of the singular elliptic profile:
# lambda^2 * log(1/r) * SECOND_ORDER_SCALE, with limit ratio -1.
SECOND_ORDER_SCALE = POLE_COEF_D3**2
SECOND_ORDER_LIMIT = -1.0


def gaussian_normalizer(x_norm: float) -> float:
    """Normalizer sqrt(2 * POLE_COEF_D3^2 * log(1/|x|)) for the d=3 statistic.

    Only defined for 0 < |x| < 1 where the log is positive.
    """
    if not 0.0 < x_norm < 1.0:
        raise ValueError(f"normalizer needs 0 < |x| < 1, got {x_norm}")
    return math.sqrt(VARIANCE_SLOPE_D3 * math.log(1.0 / x_norm))


def as_dict() -> dict:
    return {
        "pole_coef_d3": POLE_COEF_D3,
        "log_coef_d2": LOG_COEF_D2,
        "variance_slope_d3": VARIANCE_SLOPE_D3,
        "second_order_scale": SECOND_ORDER_SCALE,
        "second_order_limit": SECOND_ORDER_LIMIT,
    }


def write_json(path: str) -> None:
    """Atomically write the constants file consumed by figure tooling."""
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
