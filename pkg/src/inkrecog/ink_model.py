"""Canonical ink data types: online traces, offline rasters, and conversions.

An :class:`InkTrace` is the online representation of a handwritten line: a
sequence of pen-down strokes, each a time-stamped polyline.  The offline
representation is a :class:`RasterImage`, a grayscale bitmap produced by
rendering the trace.  Serialization is a small versioned JSON format; rasters
export as binary PGM.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTraceError, InvariantError, ParseError

INK = 255
BACKGROUND = 0


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    t: float  # milliseconds since trace start


@dataclass(frozen=True)
class Stroke:
    points: tuple[Point, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    def __len__(self):
        return len(self.points)

    def arc_length(self) -> float:
        pts = self.points
        return sum(
            math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(pts, pts[1:])
        )


@dataclass(frozen=True)
class InkTrace:
    sample_id: str
    strokes: tuple[Stroke, ...]
    transcript: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "strokes", tuple(self.strokes))
        if self.transcript is not None:
            object.__setattr__(self, "transcript", tuple(self.transcript))

    def all_points(self) -> list[Point]:
        return [p for s in self.strokes for p in s.points]


@dataclass(frozen=True)
class RasterImage:
    """Grayscale image; 0 is background, 255 is ink. Row-major, y down."""

    pixels: np.ndarray  # (height, width) uint8, read-only

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def ink_mask(self) -> np.ndarray:
        return self.pixels > 0


def validate_trace(trace: InkTrace) -> list[str]:
    """Return a list of invariant violations, empty iff the trace is valid."""
    problems = []
    if not trace.sample_id:
        problems.append("sample_id is empty")
    if len(trace.strokes) < 1:
        problems.append("trace has no strokes")
    prev_start = None
    for si, stroke in enumerate(trace.strokes):
        if len(stroke.points) < 1:
            problems.append(f"stroke {si} has no points")
            continue
        for pi, p in enumerate(stroke.points):
            for name, v in (("x", p.x), ("y", p.y), ("t", p.t)):
                if not math.isfinite(v):
                    problems.append(f"stroke {si} point {pi}: {name} not finite")
            if p.t < 0:
                problems.append(f"stroke {si} point {pi}: t < 0")
        for pi in range(1, len(stroke.points)):
            if stroke.points[pi].t < stroke.points[pi - 1].t:
                problems.append(
                    f"stroke {si} point {pi}: timestamp decreases"
                )
        start = stroke.points[0].t
        if prev_start is not None and start < prev_start:
            problems.append(f"stroke {si}: start time before stroke {si - 1}")
        prev_start = start
    return problems


def _require_valid(trace: InkTrace):
    problems = validate_trace(trace)
    if problems:
        raise InvariantError("; ".join(problems))


def load_ink(data: bytes) -> InkTrace:
    """Parse the versioned JSON ink format into a validated InkTrace."""
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"not a UTF-8 JSON document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    if doc.get("version") != 1:
        raise ParseError(f"unsupported version {doc.get('version')!r}")
    try:
        sample_id = doc["sample_id"]
        raw_strokes = doc["strokes"]
    except KeyError as exc:
        raise ParseError(f"missing field {exc}") from exc
    transcript = doc.get("transcript")
    if transcript is not None:
        if not all(isinstance(w, str) for w in transcript):
            raise ParseError("transcript entries must be strings")
        transcript = tuple(transcript)
    strokes = []
    for si, raw in enumerate(raw_strokes):
        try:
            pts = raw["points"]
        except (TypeError, KeyError):
            raise ParseError(f"stroke {si}: missing points") from None
        points = []
        for pi, triple in enumerate(pts):
            if not isinstance(triple, (list, tuple)) or len(triple) != 3:
                raise ParseError(f"stroke {si} point {pi}: expected [x,y,t]")
            x, y, t = triple
            points.append(Point(x, y, t))
        strokes.append(Stroke(tuple(points)))
    trace = InkTrace(sample_id=sample_id, strokes=tuple(strokes),
                     transcript=transcript)
    _require_valid(trace)
    return trace


def save_ink(trace: InkTrace) -> bytes:
    """Canonical serialization; inverse of load_ink on the data model."""
    _require_valid(trace)
    doc = {
        "version": 1,
        "sample_id": trace.sample_id,
        "transcript": list(trace.transcript) if trace.transcript is not None else None,
        "strokes": [
            {"points": [[p.x, p.y, p.t] for p in s.points]}
            for s in trace.strokes
        ],
    }
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def bresenham_line(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Integer Bresenham segment from (x0,y0) to (x1,y1), endpoints included."""
    points = []
    dx, dy = abs(x1 - x0), abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx - dy
    x, y = x0, y0
    while True:
        points.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    return points


def render_offline(trace: InkTrace, scale: float = 1.0, pen_width: int = 1,
                   margin: int = 0) -> RasterImage:
    """Rasterize a trace: Bresenham segments dilated by a square brush.

    The image covers the ink bounding box plus `margin` pixels on each side;
    pixel (col,row) = (round((x-minx)*scale)+margin, round((y-miny)*scale)+margin).
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if pen_width < 1:
        raise ValueError("pen_width must be >= 1")
    points = trace.all_points()
    if not points:
        raise EmptyTraceError(f"trace {trace.sample_id!r} has no points")
    xs = [p.x for p in points]
    ys = [p.y for p in points]
    minx, miny = min(xs), min(ys)
    w = int(round((max(xs) - minx) * scale)) + 2 * margin + 1
    h = int(round((max(ys) - miny) * scale)) + 2 * margin + 1
    # brush extends pen_width//2 pixels; clip at the border
    pad = pen_width // 2
    canvas = np.zeros((h + 2 * pad, w + 2 * pad), dtype=np.uint8)

    def to_px(p: Point) -> tuple[int, int]:
        return (int(round((p.x - minx) * scale)) + margin,
                int(round((p.y - miny) * scale)) + margin)

    lo = -((pen_width - 1) // 2)
    hi = pen_width // 2
    for stroke in trace.strokes:
        px = [to_px(p) for p in stroke.points]
        segments = zip(px, px[1:]) if len(px) > 1 else [(px[0], px[0])]
        for (x0, y0), (x1, y1) in segments:
            for x, y in bresenham_line(x0, y0, x1, y1):
                canvas[y + pad + lo: y + pad + hi + 1,
                       x + pad + lo: x + pad + hi + 1] = INK
    return RasterImage(canvas[pad: pad + h, pad: pad + w])


def save_pgm(image: RasterImage) -> bytes:
    """Binary (P5) PGM export."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.pixels.tobytes()


def load_pgm(data: bytes) -> RasterImage:
    """Parse a binary (P5) PGM with maxval 255."""
    if not data.startswith(b"P5"):
        raise ParseError("not a P5 PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ParseError(f"bad PGM header: {exc}") from exc
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}")
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise ParseError("truncated PGM raster")
    return RasterImage(np.frombuffer(raster, dtype=np.uint8).reshape(h, w))
