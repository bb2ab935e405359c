"""Ink data model, serialization, and rasterization tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inkrecog.errors import EmptyTraceError, InvariantError, ParseError
from inkrecog.ink_model import (
    InkTrace,
    Point,
    RasterImage,
    Stroke,
    bresenham_line,
    load_ink,
    load_pgm,
    render_offline,
    save_ink,
    save_pgm,
    validate_trace,
)


def trace_of(coords, sample_id="t1", transcript=None):
    pts = tuple(Point(x, y, 10.0 * i) for i, (x, y) in enumerate(coords))
    return InkTrace(sample_id=sample_id, strokes=(Stroke(points=pts),),
                    transcript=transcript)


# ---------------------------------------------------------------------------
# validation

def test_valid_trace_has_no_violations():
    assert validate_trace(trace_of([(0, 0), (1, 1)])) == []


def test_decreasing_timestamp_is_located():
    pts = (Point(0, 0, 0.0), Point(1, 0, 20.0), Point(2, 0, 5.0))
    trace = InkTrace(sample_id="t1", strokes=(Stroke(points=pts),))
    problems = validate_trace(trace)
    assert len(problems) == 1
    assert "stroke 0" in problems[0] and "point 2" in problems[0]


def test_violations_in_distinct_strokes_both_reported():
    s0 = Stroke(points=(Point(0, 0, 10.0), Point(1, 0, 0.0)))
    s1 = Stroke(points=(Point(0, 0, float("nan")),))
    trace = InkTrace(sample_id="t1", strokes=(s0, s1))
    assert len(validate_trace(trace)) == 2


def test_empty_sample_id_rejected():
    assert validate_trace(trace_of([(0, 0)], sample_id="")) != []


# ---------------------------------------------------------------------------
# serialization

def test_minimal_round_trip():
    trace = trace_of([(0.5, -1.25), (2, 3), (4, 4)])
    again = load_ink(save_ink(trace))
    assert again == trace


def test_transcript_round_trips():
    trace = trace_of([(0, 0), (1, 1)], transcript=("ab", "cd"))
    again = load_ink(save_ink(trace))
    assert again.transcript == ("ab", "cd")


def test_save_is_canonical():
    trace = trace_of([(0, 0), (1, 1)])
    data = save_ink(trace)
    assert save_ink(load_ink(data)) == data


def test_empty_strokes_rejected():
    with pytest.raises(InvariantError):
        load_ink(b'{"version":1,"sample_id":"x","transcript":null,"strokes":[]}')


def test_malformed_json_raises_parse_error():
    with pytest.raises(ParseError):
        load_ink(b"not json at all")


def test_wrong_version_raises_parse_error():
    with pytest.raises(ParseError):
        load_ink(b'{"version":9,"sample_id":"x","transcript":null,'
                 b'"strokes":[{"points":[[0,0,0]]}]}')


@settings(max_examples=40, deadline=None)
@given(st.lists(
    st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)),
             min_size=1, max_size=6),
    min_size=1, max_size=5))
def test_round_trip_property(stroke_coords):
    t = 0.0
    strokes = []
    for coords in stroke_coords:
        pts = []
        for x, y in coords:
            pts.append(Point(x, y, t))
            t += 10.0
        strokes.append(Stroke(points=tuple(pts)))
    trace = InkTrace(sample_id="prop", strokes=tuple(strokes))
    assert load_ink(save_ink(trace)) == trace


# ---------------------------------------------------------------------------
# rasterization

def test_bresenham_spec_fixture():
    assert bresenham_line(0, 0, 4, 2) == [(0, 0), (1, 0), (2, 1), (3, 1), (4, 2)]


def test_bresenham_endpoints_always_present():
    for x1, y1 in [(5, 0), (0, 5), (-3, 4), (7, -7), (0, 0)]:
        pts = bresenham_line(0, 0, x1, y1)
        assert pts[0] == (0, 0) and pts[-1] == (x1, y1)


def test_render_single_point():
    img = render_offline(trace_of([(0, 0)]), scale=1.0, pen_width=1, margin=0)
    assert img.width == 1 and img.height == 1
    assert img.pixels[0, 0] == 255


def test_render_horizontal_stroke_spans_columns():
    img = render_offline(trace_of([(0, 0), (10, 0)]), scale=1.0,
                         pen_width=1, margin=0)
    assert img.width == 11 and img.height == 1
    assert (img.pixels == 255).all()


def test_render_diagonal_matches_bresenham():
    img = render_offline(trace_of([(0, 0), (4, 2)]), scale=1.0,
                         pen_width=1, margin=0)
    ink = {(x, y) for y, x in zip(*np.nonzero(img.ink_mask()))}
    assert ink == {(0, 0), (1, 0), (2, 1), (3, 1), (4, 2)}


def test_render_deterministic():
    trace = trace_of([(0, 0), (3, 1), (5, 4)])
    a = render_offline(trace, scale=3.0, pen_width=2, margin=2)
    b = render_offline(trace, scale=3.0, pen_width=2, margin=2)
    assert np.array_equal(a.pixels, b.pixels)


def test_render_respects_margin_box():
    trace = trace_of([(0, 0), (3, 1), (5, 4)])
    img = render_offline(trace, scale=2.0, pen_width=1, margin=3)
    assert not img.ink_mask()[:3, :].any()
    assert not img.ink_mask()[-3:, :].any()
    assert not img.ink_mask()[:, :3].any()
    assert not img.ink_mask()[:, -3:].any()


def test_render_empty_trace_raises():
    with pytest.raises(EmptyTraceError):
        render_offline(InkTrace(sample_id="e", strokes=(Stroke(points=()),)))


def test_pgm_round_trip():
    img = render_offline(trace_of([(0, 0), (4, 2)]), scale=2.0,
                         pen_width=1, margin=1)
    again = load_pgm(save_pgm(img))
    assert np.array_equal(again.pixels, img.pixels)


def test_pgm_rejects_garbage():
    with pytest.raises(ParseError):
        load_pgm(b"P3\n1 1\n255\n0")
