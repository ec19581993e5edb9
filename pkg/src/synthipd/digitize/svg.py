"""Read Kaplan-Meier step curves and censor ticks out of SVG markup.

Only straight-segment geometry is understood: ``path`` elements built from
``M L H V Z`` (absolute or relative), ``polyline`` and ``line``. Curves are
chosen by explicit selectors over the element ``id``, its ``class`` list and
its stroke colour; nothing is guessed.
"""

from __future__ import annotations

import json
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, SvgParseError

SVG_NS = "http://www.w3.org/2000/svg"
CALIBRATION_ID = "synthipd-calibration"
MONOTONE_TOL = 1e-6

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_TOKEN = re.compile(rf"([A-Za-z])|({_NUMBER})")
_TRANSFORM = re.compile(r"(matrix|translate|scale|rotate|skewX|skewY)\s*\(([^)]*)\)")
_SUPPORTED = set("MmLlHhVvZz")


@dataclass(frozen=True)
class AxisCalibration:
    """Affine map from pixel to data coordinates, one axis at a time.

    Each anchor is a ``(pixel, data)`` pair in the root coordinate system of
    the SVG, i.e. after every ``transform`` has been applied.
    """

    x_anchors: tuple[tuple[float, float], tuple[float, float]]
    y_anchors: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        for name in ("x_anchors", "y_anchors"):
            anchors = tuple(tuple(float(v) for v in pair) for pair in getattr(self, name))
            if len(anchors) != 2 or any(len(p) != 2 for p in anchors):
                raise ConfigError(f"{name} needs two (pixel, data) pairs")
            (p0, d0), (p1, d1) = anchors
            if p0 == p1:
                raise ConfigError(f"{name} pixel values must differ")
            if d0 == d1:
                raise ConfigError(f"{name} data values must differ")
            object.__setattr__(self, name, anchors)
        if not all(-1e-9 <= d <= 1 + 1e-9 for _, d in self.y_anchors):
            raise ConfigError("survival anchors must lie in [0, 1]")

    @staticmethod
    def _map(anchors, p):
        (p0, d0), (p1, d1) = anchors
        return d0 + (np.asarray(p, dtype=float) - p0) * ((d1 - d0) / (p1 - p0))

    def to_data(self, px, py):
        return self._map(self.x_anchors, px), self._map(self.y_anchors, py)

    def x_scale(self) -> float:
        """Data units per pixel along the time axis."""
        (p0, d0), (p1, d1) = self.x_anchors
        return abs((d1 - d0) / (p1 - p0))

    def y_scale(self) -> float:
        (p0, d0), (p1, d1) = self.y_anchors
        return abs((d1 - d0) / (p1 - p0))

    def to_json(self) -> dict:
        return {"x_anchors": [list(p) for p in self.x_anchors], "y_anchors": [list(p) for p in self.y_anchors]}

    @classmethod
    def from_json(cls, obj: dict) -> "AxisCalibration":
        try:
            return cls(obj["x_anchors"], obj["y_anchors"])
        except KeyError as exc:
            raise ConfigError(f"calibration is missing {exc.args[0]!r}") from None

    @classmethod
    def from_svg(cls, svg) -> "AxisCalibration":
        """Read calibration embedded by :func:`synthipd.render.render_km_svg`."""
        root = _parse_root(svg)
        for el in root.iter():
            if _local(el.tag) == "metadata" and el.get("id") == CALIBRATION_ID:
                return cls.from_json(json.loads(el.text or "{}"))
        raise SvgParseError(f"SVG has no <metadata id=\"{CALIBRATION_ID}\"> calibration block")


@dataclass
class DigitizedCurve:
    """One arm's survival curve recovered from a figure.

    ``times`` / ``survival`` are the unique drop points: the curve falls to
    ``survival[i]`` at ``times[i]``. ``start`` is the level before the first
    drop and ``end_time`` the last time the curve is drawn.
    """

    arm: int
    times: np.ndarray
    survival: np.ndarray
    censor_ticks: np.ndarray = field(default_factory=lambda: np.empty(0))
    start: float = 1.0
    end_time: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.survival = np.asarray(self.survival, dtype=float)
        self.censor_ticks = np.asarray(self.censor_ticks, dtype=float)
        if self.times.shape != self.survival.shape:
            raise ValueError("times and survival must have equal length")
        if self.times.size:
            if np.any(np.diff(self.times) <= 0) or self.times[0] < 0:
                raise ValueError("drop times must be non-negative and strictly increasing")
            levels = np.concatenate(([self.start], self.survival))
            if np.any(np.diff(levels) > 0) or levels.min() < 0 or levels.max() > 1:
                raise ValueError("survival must be non-increasing within [0, 1]")
            self.end_time = max(self.end_time, float(self.times[-1]))

    @property
    def unique_points(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.survival.tolist()))

    def __call__(self, t):
        idx = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate(([self.start], self.survival))[idx]
        return float(vals) if np.ndim(vals) == 0 else vals

    def left_limit(self, t):
        idx = np.searchsorted(self.times, t, side="left")
        vals = np.concatenate(([self.start], self.survival))[idx]
        return float(vals) if np.ndim(vals) == 0 else vals

    def drops(self) -> np.ndarray:
        """Height of each drop."""
        return -np.diff(np.concatenate(([self.start], self.survival)))

    @classmethod
    def from_step_curve(cls, curve, arm: int) -> "DigitizedCurve":
        """Wrap a fitted :class:`~synthipd.survival.StepCurve` (ticks at its censor times)."""
        return cls(arm, curve.times, curve.survival, np.unique(curve.censor_times), 1.0, curve.end_time)


# --------------------------------------------------------------------------
# xml helpers


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_root(svg):
    if isinstance(svg, ET.Element):
        return svg
    if isinstance(svg, str):
        svg = svg.encode()
    try:
        return ET.fromstring(svg)
    except ET.ParseError as exc:
        raise SvgParseError(f"malformed SVG: {exc}") from None


def _style(el) -> dict:
    out = {}
    for item in (el.get("style") or "").split(";"):
        if ":" in item:
            k, v = item.split(":", 1)
            out[k.strip()] = v.strip()
    return out


def _stroke(el, parents) -> str | None:
    node = el
    while node is not None:
        stroke = _style(node).get("stroke") or node.get("stroke")
        if stroke:
            return stroke.lower()
        node = parents.get(node)
    return None


def matches(el, selector: dict, parents) -> bool:
    """True when ``el`` satisfies every key of ``selector``.

    Keys: ``id`` (exact), ``class`` (all listed classes present, space
    separated) and ``stroke`` (colour, inherited from ancestors).
    """
    unknown = set(selector) - {"id", "class", "stroke"}
    if unknown:
        raise ConfigError(f"unknown selector key(s): {', '.join(sorted(unknown))}")
    if "id" in selector and el.get("id") != selector["id"]:
        return False
    if "class" in selector:
        want = set(str(selector["class"]).split())
        have = set((el.get("class") or "").split())
        if not want <= have:
            return False
    if "stroke" in selector and _stroke(el, parents) != str(selector["stroke"]).lower():
        return False
    return True


# --------------------------------------------------------------------------
# transforms


def parse_transform(text: str | None) -> np.ndarray:
    """3x3 affine matrix of an SVG ``transform`` attribute."""
    m = np.eye(3)
    if not text:
        return m
    pos = 0
    for match in _TRANSFORM.finditer(text):
        if text[pos : match.start()].strip(" ,\t\n"):
            raise SvgParseError(f"cannot parse transform {text!r}")
        pos = match.end()
        name = match.group(1)
        args = [float(v) for v in re.findall(_NUMBER, match.group(2))]
        if name == "matrix":
            if len(args) != 6:
                raise SvgParseError("matrix() needs six numbers")
            a, b, c, d, e, f = args
            t = np.array([[a, c, e], [b, d, f], [0, 0, 1]])
        elif name == "translate":
            tx, ty = (args + [0.0])[:2]
            t = np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1]], dtype=float)
        elif name == "scale":
            sx = args[0]
            sy = args[1] if len(args) > 1 else sx
            t = np.diag([sx, sy, 1.0])
        elif name == "rotate":
            ang = math.radians(args[0])
            cx, cy = (args[1:3] if len(args) >= 3 else (0.0, 0.0))
            c, s = math.cos(ang), math.sin(ang)
            rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
            shift = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]])
            back = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]])
            t = shift @ rot @ back
        elif name == "skewX":
            t = np.array([[1, math.tan(math.radians(args[0])), 0], [0, 1, 0], [0, 0, 1]])
        else:
            t = np.array([[1, 0, 0], [math.tan(math.radians(args[0])), 1, 0], [0, 0, 1]])
        m = m @ t
    if text[pos:].strip(" ,\t\n"):
        raise SvgParseError(f"cannot parse transform {text!r}")
    return m


def _ctm(el, parents) -> np.ndarray:
    chain = []
    node = el
    while node is not None:
        chain.append(node)
        node = parents.get(node)
    m = np.eye(3)
    for node in reversed(chain):
        m = m @ parse_transform(node.get("transform"))
    return m


def _apply(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    if m is None or np.array_equal(m, np.eye(3)):
        return pts
    return pts @ m[:2, :2].T + m[:2, 2]


# --------------------------------------------------------------------------
# geometry


def parse_path(d: str) -> list[np.ndarray]:
    """Vertices of each subpath of a straight-segment path.

    Raises :class:`SvgParseError` on curve or arc commands.
    """
    tokens = _TOKEN.findall(d or "")
    subpaths: list[list[tuple[float, float]]] = []
    cur: list[tuple[float, float]] = []
    x = y = 0.0
    start = (0.0, 0.0)
    cmd = None
    i = 0

    def number():
        nonlocal i
        if i >= len(tokens) or not tokens[i][1]:
            raise SvgParseError(f"path data ends early or misses a number: {d[:60]!r}")
        i += 1
        return float(tokens[i - 1][1])

    while i < len(tokens):
        letter, num = tokens[i]
        if letter:
            if letter not in _SUPPORTED:
                raise SvgParseError(
                    f"unsupported path command {letter!r}; flatten curves and arcs to line segments first"
                )
            cmd = letter
            i += 1
            if cmd in "Zz":
                if cur:
                    cur.append(start)
                x, y = start
                continue
        elif cmd is None:
            raise SvgParseError("path data must start with a move-to")
        elif cmd in "Zz":
            raise SvgParseError("numbers after close-path")
        rel = cmd.islower()
        c = cmd.upper()
        if c == "M":
            nx, ny = number(), number()
            x, y = (x + nx, y + ny) if rel else (nx, ny)
            if len(cur) > 1:
                subpaths.append(cur)
            cur = [(x, y)]
            start = (x, y)
            cmd = "l" if rel else "L"
            continue
        if c == "L":
            nx, ny = number(), number()
            x, y = (x + nx, y + ny) if rel else (nx, ny)
        elif c == "H":
            nx = number()
            x = x + nx if rel else nx
        elif c == "V":
            ny = number()
            y = y + ny if rel else ny
        if not cur:
            cur = [start]
        cur.append((x, y))
    if len(cur) > 1:
        subpaths.append(cur)
    return [np.array(sp, dtype=float) for sp in subpaths]


def _points_attr(text: str) -> np.ndarray:
    vals = [float(v) for v in re.findall(_NUMBER, text or "")]
    if len(vals) % 2:
        raise SvgParseError("polyline has an odd number of coordinates")
    return np.array(vals, dtype=float).reshape(-1, 2)


def element_geometry(el) -> list[np.ndarray]:
    tag = _local(el.tag)
    if tag == "path":
        return parse_path(el.get("d", ""))
    if tag in ("polyline", "polygon"):
        pts = _points_attr(el.get("points", ""))
        if tag == "polygon" and len(pts):
            pts = np.vstack([pts, pts[:1]])
        return [pts] if len(pts) > 1 else []
    if tag == "line":
        vals = [float(el.get(k, 0.0)) for k in ("x1", "y1", "x2", "y2")]
        return [np.array(vals).reshape(2, 2)]
    if tag == "g":
        return []
    raise SvgParseError(f"selected element <{tag}> is not a path, polyline or line")


def select(svg, selector: dict):
    """Every drawable element matching ``selector``, each with its root-space vertex lists.

    A matching ``<g>`` contributes all drawable descendants.
    """
    root = _parse_root(svg)
    parents = {child: parent for parent in root.iter() for child in parent}
    out = []
    for el in root.iter():
        if not matches(el, selector, parents):
            continue
        targets = [el] if _local(el.tag) != "g" else [
            d for d in el.iter() if _local(d.tag) in ("path", "polyline", "polygon", "line")
        ]
        for t in targets:
            m = _ctm(t, parents)
            out.append((t, [_apply(m, sp) for sp in element_geometry(t)]))
    return out


# --------------------------------------------------------------------------
# curve extraction


def _step_points(segments, calibration: AxisCalibration, time_tol: float):
    """Unique drop points and curve extent from data-space polylines."""
    drops: dict[float, float] = {}
    start, end_time = 1.0, 0.0
    first = True
    for seg in segments:
        t, s = calibration.to_data(seg[:, 0], seg[:, 1])
        for k in range(1, len(t)):
            t0, t1, s0, s1 = t[k - 1], t[k], s[k - 1], s[k]
            if t1 < t0 - time_tol:
                raise SvgParseError(f"curve runs backwards in time near t={t0:.6g}")
            if s1 > s0 + MONOTONE_TOL:
                raise SvgParseError(f"survival increases from {s0:.6g} to {s1:.6g} near t={t1:.6g}")
            if s1 < s0 - MONOTONE_TOL:
                # vertical drop, or a sloped segment read as a drop at its right end
                drops[float(t1)] = min(drops.get(float(t1), 1.0), float(s1))
        if first:
            start = float(s[0])
            first = False
        else:
            start = max(start, float(s[0]))
        end_time = max(end_time, float(t.max()))
    if not drops:
        return np.empty(0), np.empty(0), min(start, 1.0), end_time
    times = np.array(sorted(drops))
    surv = np.array([drops[k] for k in times])
    # merge drops closer than the time tolerance
    keep = np.concatenate(([True], np.diff(times) > time_tol))
    groups = np.cumsum(keep) - 1
    times = times[keep]
    surv = np.array([surv[groups == g].min() for g in range(times.size)])
    surv = np.minimum.accumulate(np.clip(surv, 0.0, 1.0))
    return times, surv, min(max(start, 0.0), 1.0), end_time


def _tick_times(segments, calibration, curve_fn, tick_max_px, time_tol):
    times = []
    for seg in segments:
        for k in range(1, len(seg)):
            p, q = seg[k - 1], seg[k]
            if math.hypot(*(q - p)) > tick_max_px:
                continue
            (ta, tb), (sa, sb) = calibration.to_data([p[0], q[0]], [p[1], q[1]])
            t = 0.5 * (ta + tb)
            lo, hi = min(sa, sb), max(sa, sb)
            level = curve_fn(t)
            near = max(abs(hi - lo), 1e-9) * 0.5 + 1e-9
            if lo - near <= level <= hi + near or lo - near <= curve_fn.left_limit(t) <= hi + near:
                times.append(t)
    if not times:
        return np.empty(0)
    times = np.sort(np.array(times))
    keep = np.concatenate(([True], np.diff(times) > time_tol))
    return times[keep]


def parse_svg(
    svg,
    calibration: AxisCalibration | None,
    selectors: dict,
    tick_selectors: dict | None = None,
    tick_max_px: float = 12.0,
) -> dict[int, DigitizedCurve]:
    """Extract one :class:`DigitizedCurve` per arm.

    Parameters
    ----------
    svg : bytes, str or Element
        The figure.
    calibration : AxisCalibration or None
        Pixel-to-data map; ``None`` reads the block embedded by the renderer.
    selectors : dict
        ``{arm: selector}`` choosing each arm's curve elements.
    tick_selectors : dict, optional
        ``{arm: selector}`` choosing censor-mark elements. Segments no longer
        than ``tick_max_px`` that cross the arm's curve become censor ticks.
    """
    root = _parse_root(svg)
    if calibration is None:
        calibration = AxisCalibration.from_svg(root)
    time_tol = 1e-9 * max(1.0, max(abs(d) for _, d in calibration.x_anchors))
    tick_selectors = tick_selectors or {}
    out = {}
    for arm, selector in selectors.items():
        arm = int(arm)
        found = select(root, selector)
        if not found:
            raise SvgParseError(f"no SVG element matches the arm {arm} selector {selector}")
        segments = [sp for _, sps in found for sp in sps]
        times, surv, start, end_time = _step_points(segments, calibration, time_tol)
        curve = DigitizedCurve(arm, times, surv, np.empty(0), start, end_time)
        sel = tick_selectors.get(arm, tick_selectors.get(str(arm)))
        if sel is not None:
            tick_segs = [sp for _, sps in select(root, sel) for sp in sps]
            curve.censor_ticks = _tick_times(tick_segs, calibration, curve, tick_max_px, time_tol)
        out[arm] = curve
    return out
