"""Observation sequences for the HMM recognizers.

Offline: 9 sliding-window geometry features per column window.  Online: 6
trajectory features per equidistantly resampled point.  Both paths emit a
:class:`FeatureSequence`; z-score normalization stats are fitted over a
training corpus and applied per dimension.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import BlankImageError, DegenerateTraceError, DimensionMismatchError
from .ink_model import InkTrace, RasterImage

OFFLINE_DIM = 9
ONLINE_DIM = 6


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray  # (T, dim) float64
    source: str  # "online" | "offline"

    def __post_init__(self):
        arr = np.ascontiguousarray(self.frames, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise DimensionMismatchError("frames must be a (T, dim) array, T >= 1")
        if not np.isfinite(arr).all():
            raise ValueError("non-finite feature value")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class NormalizerStats:
    mean: np.ndarray
    std: np.ndarray  # floored at STD_FLOOR

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


STD_FLOOR = 1e-6


def extract_offline_windows(image: RasterImage, window_width: int = 1,
                            step: int = 1) -> FeatureSequence:
    """One 9-feature frame per sliding-window position, left to right.

    Features: ink count, ink center row, row variance, top contour row,
    bottom contour row, top / bottom contour slopes vs the previous window,
    ink density between the contours, background/ink transition count.
    Blank windows emit all-zero frames.
    """
    if window_width < 1 or step < 1:
        raise ValueError("window_width and step must be >= 1")
    mask = image.ink_mask()
    if not mask.any():
        raise BlankImageError("no ink pixels")
    h, w = mask.shape
    rows = np.arange(h, dtype=np.float64)
    frames = []
    prev_top = prev_bottom = None
    for x0 in range(0, w - window_width + 1, step):
        win = mask[:, x0:x0 + window_width]
        col = win.any(axis=1)
        count = int(win.sum())
        if count == 0:
            frames.append(np.zeros(OFFLINE_DIM))
            prev_top = prev_bottom = None
            continue
        ink_rows = rows[col]
        weights = win.sum(axis=1)[col].astype(np.float64)
        center = float(np.average(ink_rows, weights=weights))
        variance = float(np.average((ink_rows - center) ** 2, weights=weights))
        top = float(ink_rows.min())
        bottom = float(ink_rows.max())
        top_slope = 0.0 if prev_top is None else top - prev_top
        bottom_slope = 0.0 if prev_bottom is None else bottom - prev_bottom
        density = count / (window_width * (bottom - top + 1))
        transitions = int(np.count_nonzero(np.diff(col.astype(np.int8))))
        frames.append(np.array([count, center, variance, top, bottom,
                                top_slope, bottom_slope, density, transitions]))
        prev_top, prev_bottom = top, bottom
    return FeatureSequence(frames=np.vstack(frames), source="offline")


def _resample_stroke(xs, ys, distance):
    """Equidistant resampling along the polyline arc length."""
    seg = np.hypot(np.diff(xs), np.diff(ys))
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    n = int(math.floor(total / distance + 1e-9)) + 1
    targets = np.arange(n) * distance
    rx = np.interp(targets, arc, xs)
    ry = np.interp(targets, arc, ys)
    return rx, ry


def extract_online_features(trace: InkTrace, resample_distance: float = 1.0) -> FeatureSequence:
    """6 trajectory features per resampled point.

    Features: x offset from the running mean (scaled by the ink height),
    height above the baseline (median y), writing-direction cosine and sine,
    curvature (direction delta, radians), pen-down flag (0 marks the first
    point after a pen lift).
    """
    all_pts = trace.all_points()
    if len(all_pts) < 2:
        raise DegenerateTraceError("need at least 2 points")
    ys_all = np.array([p.y for p in all_pts])
    baseline_y = float(np.median(ys_all))
    height = max(float(ys_all.max() - ys_all.min()), 1e-6)

    xs_out, ys_out, pen = [], [], []
    for si, stroke in enumerate(trace.strokes):
        xs = np.array([p.x for p in stroke.points], dtype=np.float64)
        ys = np.array([p.y for p in stroke.points], dtype=np.float64)
        if len(xs) >= 2:
            xs, ys = _resample_stroke(xs, ys, resample_distance)
        start = len(xs_out)
        xs_out.extend(xs)
        ys_out.extend(ys)
        pen.extend([1.0] * len(xs))
        if si > 0:
            pen[start] = 0.0

    xs = np.array(xs_out)
    ys = np.array(ys_out)
    n = len(xs)
    running_mean = np.cumsum(xs) / np.arange(1, n + 1)
    dx = np.diff(xs)
    dy = np.diff(ys)
    norm = np.hypot(dx, dy)
    norm[norm == 0] = 1.0
    cos_d = np.concatenate([dx / norm, [dx[-1] / norm[-1]]]) if n > 1 else np.zeros(n)
    sin_d = np.concatenate([dy / norm, [dy[-1] / norm[-1]]]) if n > 1 else np.zeros(n)
    angles = np.arctan2(sin_d, cos_d)
    curvature = np.zeros(n)
    if n > 2:
        delta = np.diff(angles[:-1])
        delta = (delta + np.pi) % (2 * np.pi) - np.pi
        curvature[1:-1] = delta
    frames = np.column_stack([
        (xs - running_mean) / height,
        (baseline_y - ys) / height,
        cos_d,
        sin_d,
        curvature,
        np.array(pen),
    ])
    return FeatureSequence(frames=frames, source="online")


def fit_normalizer(sequences: list[FeatureSequence]) -> NormalizerStats:
    """Per-dimension population mean/std over all frames; std floored."""
    if not sequences:
        raise DimensionMismatchError("need at least one sequence")
    dim = sequences[0].dim
    if any(s.dim != dim for s in sequences):
        raise DimensionMismatchError("sequences have differing dims")
    stacked = np.vstack([s.frames for s in sequences])
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return NormalizerStats(mean=mean, std=std)


def apply_normalizer(seq: FeatureSequence, stats: NormalizerStats) -> FeatureSequence:
    if seq.dim != stats.dim:
        raise DimensionMismatchError(
            f"sequence dim {seq.dim} != stats dim {stats.dim}")
    return FeatureSequence(frames=(seq.frames - stats.mean) / stats.std,
                           source=seq.source)


def dump_features(seq: FeatureSequence) -> str:
    """Plain-text dump: header line then one space-separated frame per line."""
    out = io.StringIO()
    out.write(f"dim={seq.dim} source={seq.source}\n")
    for row in seq.frames:
        out.write(" ".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def load_features(text: str) -> FeatureSequence:
    lines = text.strip().splitlines()
    head = dict(part.split("=", 1) for part in lines[0].split())
    frames = np.array([[float(v) for v in line.split()] for line in lines[1:]])
    if frames.shape[1] != int(head["dim"]):
        raise DimensionMismatchError("header dim does not match rows")
    return FeatureSequence(frames=frames, source=head["source"])


__all__ = [
    "FeatureSequence", "NormalizerStats", "OFFLINE_DIM", "ONLINE_DIM",
    "extract_offline_windows", "extract_online_features",
    "fit_normalizer", "apply_normalizer", "dump_features", "load_features",
]
