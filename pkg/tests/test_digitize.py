import json
import math

import numpy as np
import pytest

from synthipd import IpdDataset, km_fit, summarize
from synthipd import simulate as sim
from synthipd.digitize import (
    AxisCalibration,
    DigitizedCurve,
    DigitizeJob,
    RiskTable,
    digitize,
    distribute_events,
    estimate_interval_events,
    parse_path,
    parse_svg,
    parse_transform,
)
from synthipd.errors import ConfigError, DigitizationError, SvgParseError
from synthipd.metrics import nauc
from synthipd.render import arm_selectors, render_km_svg

from helpers import random_dataset

IDENTITY_CAL = AxisCalibration(((0, 0), (20, 20)), ((0, 1.0), (10, 0.0)))


def _svg(body):
    return f'<svg xmlns="http://www.w3.org/2000/svg">{body}</svg>'


def _curve(times, surv, ticks=(), end=None):
    end = end if end is not None else (max(times) if len(times) else 10.0)
    return DigitizedCurve(0, times, surv, np.array(ticks, float), 1.0, end)


def _risk(grid, n0, n1=None, censored=None):
    return RiskTable(grid, {0: n0, 1: n1 if n1 is not None else n0}, censored or {})


# svg parsing


def test_simple_path_to_data():
    svg = _svg('<path id="c" d="M 0 0 H 10 V 5 H 20"/>')
    curve = parse_svg(svg, IDENTITY_CAL, {0: {"id": "c"}})[0]
    assert curve.unique_points == [(10.0, 0.5)]
    assert curve.end_time == 20.0 and curve.start == 1.0


def test_relative_commands_and_polyline():
    a = parse_path("m 0 0 h 10 v 5 h 10")[0]
    b = parse_path("M 0 0 L 10 0 L 10 5 L 20 5")[0]
    np.testing.assert_array_equal(a, b)
    svg = _svg('<polyline class="km x" points="0,0 10,0 10,5 20,5"/>')
    assert parse_svg(svg, IDENTITY_CAL, {0: {"class": "km"}})[0].unique_points == [(10.0, 0.5)]


def test_close_path_and_implicit_lineto():
    (pts,) = parse_path("M 0 0 10 0 10 5 Z")
    np.testing.assert_array_equal(pts[-1], [0, 0])
    assert len(pts) == 4


@pytest.mark.parametrize("cmd", ["C 1 1 2 2 3 3", "Q 1 1 2 2", "A 5 5 0 0 1 10 10", "S 1 1 2 2", "T 3 3"])
def test_curve_commands_rejected(cmd):
    with pytest.raises(SvgParseError, match="flatten"):
        parse_path(f"M 0 0 {cmd}")


def test_transforms():
    np.testing.assert_allclose(parse_transform("translate(3,4) scale(2)") @ [1, 1, 1], [5, 6, 1])
    np.testing.assert_allclose(parse_transform("rotate(90)") @ [1, 0, 1], [0, 1, 1], atol=1e-12)
    np.testing.assert_allclose(parse_transform("matrix(1 0 0 1 5 6)") @ [0, 0, 1], [5, 6, 1])
    np.testing.assert_allclose(parse_transform("rotate(180, 1, 1)") @ [0, 0, 1], [2, 2, 1], atol=1e-12)
    np.testing.assert_allclose(parse_transform("skewX(45)") @ [0, 1, 1], [1, 1, 1], atol=1e-12)
    with pytest.raises(SvgParseError):
        parse_transform("wobble(3)")


def test_nested_transforms_applied():
    svg = _svg('<g transform="translate(5,0)"><g transform="scale(2,1)"><path id="c" d="M 0 0 H 5 V 5 H 10"/></g></g>')
    cal = AxisCalibration(((5, 0), (25, 20)), ((0, 1.0), (10, 0.0)))
    assert parse_svg(svg, cal, {0: {"id": "c"}})[0].unique_points == [(10.0, 0.5)]


def test_stroke_selector_inherited():
    svg = _svg('<g style="stroke: #FF0000"><path d="M 0 0 H 10 V 5 H 20"/></g><path stroke="#00ff00" d="M 0 0 H 4 V 2"/>')
    curves = parse_svg(svg, IDENTITY_CAL, {0: {"stroke": "#ff0000"}, 1: {"stroke": "#00FF00"}})
    assert curves[0].unique_points == [(10.0, 0.5)]
    assert curves[1].unique_points == [(4.0, 0.8)]


def test_selector_errors():
    svg = _svg('<path id="c" d="M 0 0 H 10"/>')
    with pytest.raises(SvgParseError, match="no SVG element"):
        parse_svg(svg, IDENTITY_CAL, {0: {"id": "missing"}})
    with pytest.raises(ConfigError):
        parse_svg(svg, IDENTITY_CAL, {0: {"colour": "red"}})
    with pytest.raises(SvgParseError):
        parse_svg("<svg", IDENTITY_CAL, {0: {"id": "c"}})


def test_monotone_violation_and_clamping():
    up = _svg('<path id="c" d="M 0 5 H 10 V 0"/>')
    with pytest.raises(SvgParseError, match="increases"):
        parse_svg(up, IDENTITY_CAL, {0: {"id": "c"}})
    tiny = _svg('<path id="c" d="M 0 0 H 5 V 5 H 10 V 4.99999999 H 20"/>')
    curve = parse_svg(tiny, IDENTITY_CAL, {0: {"id": "c"}})[0]
    assert curve.unique_points == [(5.0, 0.5)]


def test_calibration_validation():
    with pytest.raises(ConfigError):
        AxisCalibration(((0, 0), (0, 10)), ((0, 1), (1, 0)))
    with pytest.raises(ConfigError):
        AxisCalibration(((0, 0), (1, 10)), ((0, 1), (1, 1.5)))
    with pytest.raises(SvgParseError):
        AxisCalibration.from_svg(_svg(""))


def test_ticks_detected_on_curve_only():
    body = (
        '<path id="c" d="M 0 0 H 10 V 5 H 20"/>'
        '<g class="censor"><path d="M 4 -1 V 1"/><path d="M 15 4 V 6"/><path d="M 15 4 V 6"/>'
        '<path d="M 12 8 V 9"/><path d="M 2 -10 V 10"/></g>'
    )
    curve = parse_svg(_svg(body), IDENTITY_CAL, {0: {"id": "c"}}, {0: {"class": "censor"}}, tick_max_px=3)[0]
    np.testing.assert_allclose(curve.censor_ticks, [4.0, 15.0])


def test_render_parse_round_trip_small():
    d = IpdDataset([1.0, 2.0, 2.5, 4.0, 1.5, 3.0], [1, 0, 1, 1, 1, 0], [0, 0, 0, 0, 1, 1])
    svg = render_km_svg(d, {})
    cur, ticks = arm_selectors()
    curves = parse_svg(svg, None, cur, ticks)
    for a in (0, 1):
        km = km_fit(d.slice(a=a))
        np.testing.assert_allclose(curves[a].times, km.times, rtol=1e-12)
        np.testing.assert_allclose(curves[a].survival, km.survival, rtol=1e-12)
        np.testing.assert_allclose(curves[a].censor_ticks, np.unique(km.censor_times), rtol=1e-12)


def test_render_case3_curves_cross():
    trial = sim.generate(sim.SimSpec(3, n=4000, seed=1))
    d = trial.dataset("x1").without_covariate()
    cur, ticks = arm_selectors()
    curves = parse_svg(render_km_svg(d), None, cur, ticks)
    grid = np.linspace(0.5, 20, 40)
    diff = curves[1](grid) - curves[0](grid)
    assert diff[0] < 0 and diff[-1] > 0


# interval accounting


def test_interval_examples():
    curve = _curve([5.0], [0.6], end=10.0)
    curve.start = 0.8
    est = estimate_interval_events(curve, _risk([0, 10], [100, 75]), 0, 0)
    assert est.e_formula == 25 and est.events == 25 and est.censored == 0
    flat = _curve([], [], end=10.0)
    est = estimate_interval_events(flat, _risk([0, 10], [50, 50]), 0, 0)
    assert (est.events, est.censored) == (0, 0)
    c = _curve([5.0], [0.72], end=10.0)
    c.start = 0.8
    est = estimate_interval_events(c, _risk([0, 10], [100, 80]), 0, 0)
    assert (est.e_formula, est.events, est.censored) == (10, 10, 10)
    assert est.literal_censored == 90


@pytest.mark.parametrize("method", ["average", "sequential"])
def test_equal_drops_split_evenly(method):
    curve = _curve([2.0, 4.0], [0.8, 0.6], end=5.0)
    rec = distribute_events(curve, _risk([0, 5], [10, 6]), 0, method=method)
    times = rec.time[rec.event]
    assert list(times) == [2.0, 2.0, 4.0, 4.0]


def test_single_drop_takes_all_events():
    curve = _curve([3.0], [0.7], end=5.0)
    rec = distribute_events(curve, _risk([0, 5], [10, 7]), 0)
    assert list(rec.time[rec.event]) == [3.0, 3.0, 3.0]


def test_zero_survival_with_patients_at_risk():
    curve = _curve([1.0], [0.0], end=5.0)
    with pytest.raises(DigitizationError, match="survival is 0"):
        distribute_events(curve, _risk([0, 2, 4], [5, 2, 1]), 0)


def test_too_many_drops_for_decrement():
    curve = _curve([1.0, 2.0, 3.0], [0.9, 0.8, 0.7], end=5.0)
    with pytest.raises(DigitizationError, match="interval 0"):
        distribute_events(curve, _risk([0, 5], [10, 8]), 0)


def test_reported_censorings_fix_totals():
    curve = _curve([1.0, 3.0], [0.8, 0.6], ticks=[2.0], end=5.0)
    risk = RiskTable([0, 5], {0: [10, 4], 1: [10, 4]}, {0: [2]})
    est = estimate_interval_events(curve, risk, 0, 0)
    assert (est.events, est.censored) == (4, 2)
    with pytest.raises(DigitizationError):
        distribute_events(curve, RiskTable([0, 5], {0: [10, 4], 1: [10, 4]}, {0: [5]}), 0)


def test_risk_table_validation():
    with pytest.raises(ConfigError):
        RiskTable([0, 5, 3], {0: [3, 2, 1], 1: [3, 2, 1]})
    with pytest.raises(ConfigError):
        RiskTable([0, 5], {0: [3, 4], 1: [3, 2]})
    with pytest.raises(ConfigError):
        RiskTable([0, 5], {0: [3, 2]})
    with pytest.raises(ConfigError):
        RiskTable([0, 5], {0: [3, 2], 1: [3, 2]}, {0: [1, 1]})


def test_censor_placement_without_ticks():
    curve = _curve([], [], end=10.0)
    rec = distribute_events(curve, _risk([0, 10], [4, 0]), 0)
    np.testing.assert_allclose(rec.time, [1.25, 3.75, 6.25, 8.75])
    assert not rec.event.any()


def test_flat_arms_censored_at_end():
    curve = _curve([], [], end=12.0)
    data, report = digitize({0: curve, 1: curve}, _risk([0, 6, 12], [7, 7, 7]), seed=0)
    assert len(data) == 14 and not data.event.any() and np.all(data.time == 12.0)
    assert report.intervals[-1].trailing


def test_identical_arms_identical_records():
    curve = _curve([1.0, 2.5, 4.0], [0.8, 0.5, 0.3], ticks=[1.5, 3.0], end=6.0)
    data, _ = digitize({0: curve, 1: curve}, _risk([0, 3, 6], [10, 6, 2]), seed=5)
    a0, a1 = data.slice(a=0), data.slice(a=1)
    assert np.array_equal(a0.time, a1.time) and np.array_equal(a0.event, a1.event)


def _case_round_trip(seed, case=1, grid_step=6.0, ticks=True, method="sequential"):
    d = sim.generate(sim.SimSpec(case, n=500, seed=seed)).dataset("x1").without_covariate()
    cur, tk = arm_selectors()
    curves = parse_svg(render_km_svg(d), None, cur, tk if ticks else None)
    risk = RiskTable.from_data(d, np.arange(0.0, d.time.max(), grid_step))
    out, report = digitize(curves, risk, seed=3, method=method)
    return d, curves, risk, out, report


def test_conservation_and_counts():
    for seed in range(3):
        d, curves, risk, out, report = _case_round_trip(seed, case=2, grid_step=0.5, ticks=seed != 1)
        assert out.arm_sizes() == d.arm_sizes()
        for iv in report.intervals:
            assert iv.events + iv.censored == iv.decrement
            assert iv.events >= iv.n_drops
        for a in (0, 1):
            assert report.totals(a)[0] + report.totals(a)[1] == risk.arm_size(a)


def test_curve_fidelity():
    for seed in range(4):
        d, curves, risk, out, _ = _case_round_trip(seed)
        for a in (0, 1):
            km = km_fit(out.slice(a=a))
            gap = np.abs(km(curves[a].times) - curves[a].survival).max()
            assert gap <= 1 / (2 * risk.arm_size(a)) + 1e-9


def test_round_trip_nauc_and_summaries():
    d, _, _, out, _ = _case_round_trip(7)
    for a in (0, 1):
        assert nauc(d.slice(a=a), out.slice(a=a)) <= 5e-3
    zero = lambda x: x.with_covariate(np.zeros(len(x), int), 0)
    s, t = summarize(zero(d)), summarize(zero(out))
    np.testing.assert_allclose(t.hr_array(), s.hr_array(), rtol=0.01)
    np.testing.assert_allclose(t.median_array(), s.median_array(), rtol=0.01)


def test_determinism_and_report_json():
    *_, out1, rep1 = _case_round_trip(2, ticks=False)
    *_, out2, rep2 = _case_round_trip(2, ticks=False)
    assert out1 == out2
    js = rep1.to_json()
    assert js == rep2.to_json() and js["schema"] == 1
    assert {"e_formula", "literal_censored", "correction"} <= set(js["intervals"][0])
    json.dumps(js)


def test_job_file(tmp_path):
    d = random_dataset(np.random.default_rng(1), 60, k_max=0).without_covariate()
    (tmp_path / "fig.svg").write_bytes(render_km_svg(d))
    cur, tk = arm_selectors()
    job = {
        "schema": 1,
        "svg": "fig.svg",
        "calibration": "embedded",
        "arms": {str(a): {"selector": cur[a], "ticks": tk[a]} for a in (0, 1)},
        "risk_table": RiskTable.from_data(d, [0, 5, 10, 15]).to_json(),
        "seed": 4,
    }
    (tmp_path / "job.json").write_text(json.dumps(job))
    out, report = DigitizeJob.load(tmp_path / "job.json").run()
    assert out.arm_sizes() == d.arm_sizes()
    del job["risk_table"]
    with pytest.raises(ConfigError, match="risk_table"):
        DigitizeJob.from_json(job, tmp_path)
    job["risk_table"] = {"grid": [0], "at_risk": {"0": [1], "1": [1]}}
    job["svg"] = "nope.svg"
    with pytest.raises(ConfigError, match="not found"):
        DigitizeJob.from_json(job, tmp_path)
