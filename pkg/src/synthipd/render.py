"""Plain SVG Kaplan-Meier plots with embedded axis calibration.

The output uses straight-segment path commands only and tags every element
so that :func:`synthipd.digitize.parse_svg` can read it back without any
manual configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

from .data import IpdDataset
from .digitize.svg import CALIBRATION_ID
from .survival import km_fit

ARM_COLORS = ("#1f77b4", "#d62728")


@dataclass
class PlotStyle:
    width: float = 640.0
    height: float = 420.0
    margin: float = 50.0
    offset: tuple[float, float] = (7.0, 3.0)
    x_max: float | None = None
    tick_half: float = 4.0
    stroke_width: float = 1.0
    colors: tuple[str, str] = ARM_COLORS

    @classmethod
    def from_dict(cls, style: dict | None) -> "PlotStyle":
        style = dict(style or {})
        known = {f.name for f in fields(cls)}
        unknown = set(style) - known
        if unknown:
            raise ValueError(f"unknown style key(s): {', '.join(sorted(unknown))}")
        return cls(**style)


def arm_selectors() -> tuple[dict, dict]:
    """Curve and tick selectors matching the renderer's element naming."""
    curves = {a: {"id": f"km-arm{a}"} for a in (0, 1)}
    ticks = {a: {"class": f"censor arm{a}"} for a in (0, 1)}
    return curves, ticks


def render_km_svg(data: IpdDataset, style: dict | PlotStyle | None = None) -> bytes:
    """Draw one Kaplan-Meier curve per arm with censor tick marks."""
    if len(data) == 0:
        raise ValueError("cannot plot an empty dataset")
    st = style if isinstance(style, PlotStyle) else PlotStyle.from_dict(style)
    x_max = st.x_max if st.x_max is not None else float(data.time.max())
    if not x_max > 0:
        x_max = 1.0
    left, top = st.margin, st.margin
    plot_w = st.width - 2 * st.margin
    plot_h = st.height - 2 * st.margin
    ox, oy = st.offset

    def px(t):
        return float(left + t / x_max * plot_w)

    def py(s):
        return float(top + (1.0 - s) * plot_h)

    calibration = {
        "x_anchors": [[px(0.0) + ox, 0.0], [px(x_max) + ox, x_max]],
        "y_anchors": [[py(1.0) + oy, 1.0], [py(0.0) + oy, 0.0]],
    }
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{st.width!r}" height="{st.height!r}" '
        f'viewBox="0 0 {st.width!r} {st.height!r}">',
        f'<metadata id="{CALIBRATION_ID}">{json.dumps(calibration)}</metadata>',
        f'<g id="plot" transform="translate({ox!r},{oy!r})">',
        f'<path id="axes" d="M {left!r} {top!r} V {py(0.0)!r} H {px(x_max)!r}" stroke="#000000" fill="none"/>',
    ]
    for a in (0, 1):
        arm_data = data.slice(a=a)
        if len(arm_data) == 0:
            continue
        curve = km_fit(arm_data)
        color = st.colors[a]
        d = [f"M {px(0.0)!r} {py(1.0)!r}"]
        for t, s in zip(curve.times, curve.survival):
            d.append(f"H {px(t)!r} V {py(s)!r}")
        d.append(f"H {px(curve.end_time)!r}")
        parts.append(
            f'<path id="km-arm{a}" class="km arm{a}" d="{" ".join(d)}" stroke="{color}" '
            f'stroke-width="{st.stroke_width!r}" fill="none"/>'
        )
        parts.append(f'<g id="censor-arm{a}" class="censor arm{a}" stroke="{color}">')
        for c in np.unique(curve.censor_times):
            x, y = px(c), py(curve(c))
            parts.append(f'<path d="M {x!r} {y - st.tick_half!r} V {y + st.tick_half!r}"/>')
        parts.append("</g>")
    parts += ["</g>", "</svg>"]
    return ("\n".join(parts) + "\n").encode()
