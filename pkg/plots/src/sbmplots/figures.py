"""The five figure kinds rendered from sbmlab CSV tables.

Figures read columns written by the simulation side verbatim and never
recompute statistics; reference overlays come from the shared constants file.
Rendering is deterministic: fixed style, fixed SVG hash salt, no timestamps in
the output metadata.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .refconstants import ReferenceConstants, load as load_constants

matplotlib.rcParams["svg.hashsalt"] = "sbmlab-plots"

FIGURE_KINDS = ("hist_vs_normal", "regression", "paired_trace", "ratio_curve",
                "envelope")

STYLE_DEFAULTS = {
    "figsize": (6.0, 4.0),
    "dpi": 130,
    "color": "#2b6cb0",
    "ref_color": "#c53030",
    "max_traces": 40,
    "bins": 30,
    "title": None,
}


class ColumnError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str
    constants_path: str
    column: str | None = None
    filters: dict = field(default_factory=dict)
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; "
                             f"known: {FIGURE_KINDS}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")

    @staticmethod
    def from_dict(payload: dict) -> "FigureSpec":
        known = {"kind", "inputs", "output", "constants_path", "column",
                 "filters", "style"}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return FigureSpec(**payload)


def _read_table(path: str, required: list[str], filters: dict) -> pd.DataFrame:
    frame = pd.read_csv(path)
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ColumnError(f"{path} is missing columns {missing}; "
                          f"found {list(frame.columns)}")
    for col, val in filters.items():
        if col not in frame.columns:
            raise ColumnError(f"filter column {col!r} not in {path}")
        frame = frame[np.isclose(frame[col], val)] if frame[col].dtype.kind in "fc" \
            else frame[frame[col] == val]
    if frame.empty:
        raise EmptyInputError(f"{path} has no rows (after filters {filters})")
    return frame


def render(spec: FigureSpec) -> str:
    """Render one figure; returns the output path. No image is written when
    the input is empty or misshaped."""
    consts = load_constants(spec.constants_path)
    style = dict(STYLE_DEFAULTS)
    style.update(spec.style)
    fig, ax = plt.subplots(figsize=style["figsize"], dpi=style["dpi"])
    try:
        _RENDERERS[spec.kind](spec, consts, ax, style)
        if style["title"]:
            ax.set_title(style["title"])
        fig.tight_layout()
        _save(fig, spec.output)
    finally:
        plt.close(fig)
    return spec.output


def _save(fig, output: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(output)), exist_ok=True)
    if output.endswith(".svg"):
        fig.savefig(output, metadata={"Date": None})
    else:
        fig.savefig(output)


def _hist_vs_normal(spec, consts, ax, style):
    col = spec.column or "aux1"
    frame = _read_table(spec.inputs[0], [col], spec.filters)
    vals = frame[col].to_numpy(dtype=float)
    ax.hist(vals, bins=style["bins"], density=True, color=style["color"],
            alpha=0.75, label=col)
    grid = np.linspace(min(-4.0, vals.min()), max(4.0, vals.max()), 400)
    ax.plot(grid, np.exp(-grid**2 / 2.0) / math.sqrt(2.0 * math.pi),
            color=style["ref_color"], lw=2, label="standard normal")
    ax.set_xlabel(col)
    ax.set_ylabel("density")
    ax.legend()


def _regression(spec, consts, ax, style):
    frame = _read_table(spec.inputs[0], ["log_inv_x", "variance"], spec.filters)
    x = frame["log_inv_x"].to_numpy(dtype=float)
    y = frame["variance"].to_numpy(dtype=float)
    ax.scatter(x, y, color=style["color"], zorder=3, label="level variances")
    slope = consts.variance_slope_d3
    grid = np.linspace(x.min(), x.max(), 50)
    anchor = y.mean() - slope * x.mean()
    ax.plot(grid, slope * grid + anchor, color=style["ref_color"], lw=2,
            label=f"reference slope {slope:.4g}")
    ax.set_xlabel("log(1/|x|)")
    ax.set_ylabel("variance")
    ax.legend()


def _paired_trace(spec, consts, ax, style):
    frame = _read_table(spec.inputs[0], ["replicate", "x_norm", "aux1"],
                        spec.filters)
    reps = sorted(frame["replicate"].unique())[: style["max_traces"]]
    for rep in reps:
        sub = frame[frame["replicate"] == rep].sort_values("x_norm",
                                                           ascending=False)
        ax.plot(np.log(1.0 / sub["x_norm"].to_numpy(dtype=float)),
                sub["aux1"].to_numpy(dtype=float),
                color=style["color"], alpha=0.25, lw=1)
    ax.set_xlabel("log(1/|x|)")
    ax.set_ylabel("residual")


def _ratio_curve(spec, consts, ax, style):
    frame = _read_table(spec.inputs[0], ["r", "ratio"], spec.filters)
    sub = frame[(frame["r"] > 0)].sort_values("r")
    sub = sub[sub["r"] <= 0.1]
    if sub.empty:
        raise EmptyInputError(f"{spec.inputs[0]} has no rows with r <= 0.1")
    ax.semilogx(sub["r"].to_numpy(dtype=float),
                sub["ratio"].to_numpy(dtype=float),
                color=style["color"], lw=2, label="second-order ratio")
    ax.axhline(consts.second_order_limit, color=style["ref_color"], lw=2,
               ls="--", label=f"limit {consts.second_order_limit:g}")
    ax.set_xlabel("r")
    ax.set_ylabel("ratio")
    ax.legend()


def _envelope(spec, consts, ax, style):
    frame = _read_table(spec.inputs[0],
                        ["alpha", "x_norm", "mean_envelope"], spec.filters)
    for alpha in sorted(frame["alpha"].unique()):
        sub = frame[frame["alpha"] == alpha].sort_values("x_norm",
                                                         ascending=False)
        ax.plot(np.log2(1.0 / sub["x_norm"].to_numpy(dtype=float)),
                sub["mean_envelope"].to_numpy(dtype=float),
                marker="o", label=f"alpha = {alpha:g}")
    ax.set_xlabel("level (log2 of 1/|x|)")
    ax.set_ylabel("mean envelope")
    ax.legend()


_RENDERERS = {
    "hist_vs_normal": _hist_vs_normal,
    "regression": _regression,
    "paired_trace": _paired_trace,
    "ratio_curve": _ratio_curve,
    "envelope": _envelope,
}
