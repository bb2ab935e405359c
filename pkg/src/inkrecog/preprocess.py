"""Online stroke cleanup and offline normalization.

Online side: gap interpolation (Bresenham on a median-spacing grid),
neighbor-average smoothing, chain-code de-hooking, and digraph stroke
merging.  Offline side: projection-based baseline/skew estimation, rotation,
and shear-based slant correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import median

import numpy as np

from .errors import BlankImageError, InvariantError
from .ink_model import InkTrace, Point, RasterImage, Stroke, bresenham_line

SKEW_SWEEP_DEG = 15.0
SKEW_STEP_DEG = 0.5
SLANT_RANGE_DEG = 45.0


@dataclass(frozen=True)
class PreprocessConfig:
    gap_factor: float = 2.0
    smoothing_kernel: tuple[float, float, float] = (0.25, 0.5, 0.25)
    hook_max_fraction: float = 0.10
    hook_min_turn_deg: float = 90.0
    digraph_merge_gap_ms: float = 150.0
    digraph_merge_distance_factor: float = 1.0

    def __post_init__(self):
        if self.gap_factor <= 0 or self.hook_max_fraction <= 0 \
                or self.hook_min_turn_deg <= 0 \
                or self.digraph_merge_gap_ms <= 0 \
                or self.digraph_merge_distance_factor <= 0:
            raise InvariantError("all thresholds must be positive")
        k = self.smoothing_kernel
        if len(k) != 3 or any(w < 0 for w in k):
            raise InvariantError("smoothing kernel must be 3 non-negative weights")
        if abs(sum(k) - 1.0) > 1e-12:
            raise InvariantError("smoothing kernel must sum to 1")


@dataclass(frozen=True)
class BaselineEstimate:
    row: int
    skew_deg: float
    confidence: float


def _segment_lengths(points) -> list[float]:
    return [math.hypot(b.x - a.x, b.y - a.y)
            for a, b in zip(points, points[1:])]


def median_spacing(trace_or_stroke) -> float:
    """Median distance between consecutive points within strokes (>= tiny)."""
    strokes = (trace_or_stroke.strokes
               if isinstance(trace_or_stroke, InkTrace) else [trace_or_stroke])
    gaps = [g for s in strokes for g in _segment_lengths(s.points) if g > 0]
    return median(gaps) if gaps else 1.0


def interpolate_gaps(stroke: Stroke, cfg: PreprocessConfig) -> Stroke:
    """Fill over-large gaps with Bresenham points on the median-spacing grid.

    Timestamps of inserted points are linear between the gap endpoints.
    Degenerate (sub-2-point) strokes come back unchanged.
    """
    if len(stroke.points) < 2:
        return stroke
    unit = median_spacing(stroke)
    threshold = cfg.gap_factor * unit
    out = [stroke.points[0]]
    for a, b in zip(stroke.points, stroke.points[1:]):
        if math.hypot(b.x - a.x, b.y - a.y) > threshold:
            ga = (round(a.x / unit), round(a.y / unit))
            gb = (round(b.x / unit), round(b.y / unit))
            interior = bresenham_line(*ga, *gb)[1:-1]
            n = len(interior)
            for k, (gx, gy) in enumerate(interior, start=1):
                t = a.t + (b.t - a.t) * k / (n + 1)
                out.append(Point(gx * unit, gy * unit, t))
        out.append(b)
    return Stroke(tuple(out))


def smooth_stroke(stroke: Stroke, cfg: PreprocessConfig) -> Stroke:
    """Kernel-average interior coordinates; endpoints and timestamps fixed."""
    pts = stroke.points
    if len(pts) < 3:
        return stroke
    w0, w1, w2 = cfg.smoothing_kernel
    out = [pts[0]]
    for prev, cur, nxt in zip(pts, pts[1:], pts[2:]):
        out.append(Point(w0 * prev.x + w1 * cur.x + w2 * nxt.x,
                         w0 * prev.y + w1 * cur.y + w2 * nxt.y,
                         cur.t))
    out.append(pts[-1])
    return Stroke(tuple(out))


def _chain_codes(points) -> list[int]:
    """8-direction chain code per segment (45-degree sectors)."""
    codes = []
    for a, b in zip(points, points[1:]):
        ang = math.degrees(math.atan2(b.y - a.y, b.x - a.x))
        codes.append(int(round(ang / 45.0)) % 8)
    return codes


def _signed_step_deg(c_from: int, c_to: int) -> float:
    """Signed turn between chain codes, in degrees, in (-180, 180]."""
    d = (c_to - c_from) % 8
    if d > 4:
        d -= 8
    return d * 45.0


def _end_hook_cut(points, seglen, codes, cfg) -> int | None:
    """Point index to cut after (keep points[:j+1]); None if no end hook."""
    n = len(points)
    total = sum(seglen)
    if total <= 0:
        return None
    max_len = cfg.hook_max_fraction * total
    # earliest admissible boundary where the turn actually starts gives the
    # maximal removable suffix
    for j in range(1, n - 1):
        if sum(seglen[j:]) > max_len:
            continue
        if _signed_step_deg(codes[j - 1], codes[j]) == 0.0:
            continue
        turn = sum(_signed_step_deg(codes[k - 1], codes[k])
                   for k in range(j, n - 1))
        if abs(turn) > cfg.hook_min_turn_deg:
            return j
    return None


def dehook_stroke(stroke: Stroke, cfg: PreprocessConfig) -> Stroke:
    """Drop sharply turning short tails at either stroke end.

    A tail is removed iff its arc length is at most hook_max_fraction of the
    stroke and the chain-code direction change across the cut exceeds
    hook_min_turn_deg.  Interior points are never modified; output is a
    contiguous sub-sequence of the input.
    """
    pts = stroke.points
    if len(pts) < 4:
        return stroke
    seglen = _segment_lengths(pts)
    codes = _chain_codes(pts)
    end_cut = _end_hook_cut(pts, seglen, codes, cfg)
    # prefix hook: same test on the reversed stroke
    rpts = pts[::-1]
    rcut = _end_hook_cut(rpts, seglen[::-1], _chain_codes(rpts), cfg)
    start = (len(pts) - 1 - rcut) if rcut is not None else 0
    stop = (end_cut + 1) if end_cut is not None else len(pts)
    if stop - start < 2:
        return stroke
    return Stroke(pts[start:stop])


def merge_digraph_strokes(trace: InkTrace, cfg: PreprocessConfig) -> InkTrace:
    """Concatenate consecutive strokes split by a brief, short pen lift."""
    if len(trace.strokes) < 2:
        return trace
    dist_limit = cfg.digraph_merge_distance_factor * median_spacing(trace)
    merged: list[list[Point]] = [list(trace.strokes[0].points)]
    for stroke in trace.strokes[1:]:
        prev_last = merged[-1][-1]
        first = stroke.points[0]
        gap_ms = first.t - prev_last.t
        dist = math.hypot(first.x - prev_last.x, first.y - prev_last.y)
        if gap_ms <= cfg.digraph_merge_gap_ms and dist <= dist_limit:
            merged[-1].extend(stroke.points)
        else:
            merged.append(list(stroke.points))
    return InkTrace(sample_id=trace.sample_id,
                    strokes=tuple(Stroke(tuple(pts)) for pts in merged),
                    transcript=trace.transcript)


def run_online_pipeline(trace: InkTrace, cfg: PreprocessConfig | None = None) -> InkTrace:
    """interpolate -> smooth -> dehook per stroke, then digraph merging."""
    cfg = cfg or PreprocessConfig()
    strokes = tuple(
        dehook_stroke(smooth_stroke(interpolate_gaps(s, cfg), cfg), cfg)
        for s in trace.strokes
    )
    cleaned = InkTrace(sample_id=trace.sample_id, strokes=strokes,
                       transcript=trace.transcript)
    return merge_digraph_strokes(cleaned, cfg)


# ---------------------------------------------------------------------------
# offline normalization

def rotate_image(image: RasterImage, angle_deg: float) -> RasterImage:
    """Rotate content about the image center, nearest-neighbor.

    Output grows just enough to contain the rotated canvas.
    """
    if angle_deg == 0.0:
        return image
    h, w = image.pixels.shape
    rad = math.radians(angle_deg)
    c, s = math.cos(rad), math.sin(rad)
    nw = int(math.ceil(abs(w * c) + abs(h * s)))
    nh = int(math.ceil(abs(w * s) + abs(h * c)))
    yy, xx = np.mgrid[0:nh, 0:nw]
    xc, yc = (w - 1) / 2.0, (h - 1) / 2.0
    nxc, nyc = (nw - 1) / 2.0, (nh - 1) / 2.0
    dx, dy = xx - nxc, yy - nyc
    # inverse rotation back into source coordinates
    sx = np.rint(c * dx + s * dy + xc).astype(int)
    sy = np.rint(-s * dx + c * dy + yc).astype(int)
    ok = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.zeros((nh, nw), dtype=np.uint8)
    out[ok] = image.pixels[sy[ok], sx[ok]]
    return RasterImage(out)


def _projection_peak(pixels: np.ndarray) -> int:
    # squared-sum sharpness rather than the bare max: the max saturates on
    # wide flat bands, leaving a plateau of equally "good" angles
    counts = (pixels > 0).sum(axis=1).astype(np.int64)
    return int((counts * counts).sum())


def estimate_baseline(image: RasterImage) -> BaselineEstimate:
    """Baseline row from the horizontal projection; skew from a rotation sweep.

    The reported skew_deg is the angle correct_skew must remove: rotating the
    image by -skew_deg maximizes the projection peak.
    """
    mask = image.ink_mask()
    total = int(mask.sum())
    if total == 0:
        raise BlankImageError("no ink pixels")
    counts = mask.sum(axis=1)
    row = int(np.argmax(counts))  # argmax takes the lowest index on ties
    best_angle, best_peak = 0.0, -1
    for angle in np.arange(-SKEW_SWEEP_DEG, SKEW_SWEEP_DEG + 1e-9, SKEW_STEP_DEG):
        peak = _projection_peak(rotate_image(image, float(angle)).pixels)
        if peak > best_peak or (peak == best_peak
                                and abs(angle) < abs(best_angle)):
            best_peak, best_angle = peak, float(angle)
    return BaselineEstimate(row=row, skew_deg=-best_angle,
                            confidence=float(counts[row]) / total)


def correct_skew(image: RasterImage, skew_deg: float) -> RasterImage:
    """Rotate so the baseline becomes horizontal."""
    if abs(skew_deg) > 45:
        raise ValueError("skew correction limited to +/-45 degrees")
    return rotate_image(image, -skew_deg)


def shear_image(image: RasterImage, angle_deg: float) -> RasterImage:
    """Horizontal shear: positive angle leans stroke tops to the right."""
    if angle_deg == 0.0:
        return image
    h, w = image.pixels.shape
    t = math.tan(math.radians(angle_deg))
    # row 0 is the top; shift each row by t * (height below the bottom row)
    shifts = t * (np.arange(h)[::-1]).astype(float)
    shifts -= shifts.min()
    nw = w + int(math.ceil(shifts.max()))
    out = np.zeros((h, nw), dtype=np.uint8)
    for y in range(h):
        off = int(round(shifts[y]))
        out[y, off:off + w] = image.pixels[y]
    return RasterImage(out)


def _column_sharpness(mask: np.ndarray, angle_deg: float) -> float:
    """Squared-column-sum energy of the mask sheared upright by angle_deg."""
    h = mask.shape[0]
    t = math.tan(math.radians(-angle_deg))
    shifts = np.rint(t * (np.arange(h)[::-1]) - min(0.0, t * (h - 1)))
    width = mask.shape[1] + int(shifts.max()) + 1
    counts = np.zeros(width, dtype=np.int64)
    for y in range(h):
        off = int(shifts[y])
        counts[off:off + mask.shape[1]] += mask[y]
    return float((counts.astype(np.float64) ** 2).sum())


def estimate_slant(image: RasterImage) -> float:
    """Dominant near-vertical stroke angle, degrees from vertical.

    Sweeps candidate shear angles and picks the one whose upright shear
    maximizes the sharpness of the vertical ink projection (same idea as the
    rotation sweep used for skew, which stays accurate on hard-quantized
    stroke edges where gradient orientations degenerate into staircases).
    """
    mask = image.ink_mask().astype(np.int64)
    if not mask.any():
        raise BlankImageError("no ink pixels")

    def best_in(angles):
        top, top_score = 0.0, -1.0
        for angle in angles:
            score = _column_sharpness(mask, float(angle))
            if score > top_score or (score == top_score
                                     and abs(angle) < abs(top)):
                top_score, top = score, float(angle)
        return top

    coarse = best_in(np.arange(-SLANT_RANGE_DEG, SLANT_RANGE_DEG + 1e-9, 1.0))
    return best_in(np.arange(coarse - 1.0, coarse + 1.0 + 1e-9, 0.25))


def correct_slant(image: RasterImage) -> RasterImage:
    """Shear so the dominant stroke direction becomes vertical."""
    return shear_image(image, -estimate_slant(image))
