"""Polyline geometry helpers shared by matching, evaluation, and scene
generation.  Everything here is plain numpy on [K,2] float arrays of
(x, y) points in meters."""
from __future__ import annotations

import numpy as np


def polyline_length(points: np.ndarray) -> float:
    d = np.diff(points, axis=0)
    return float(np.sqrt((d * d).sum(axis=1)).sum())


def resample_polyline(points: np.ndarray, interval: float) -> np.ndarray:
    """Sample along arc length every ``interval`` meters, endpoints included.

    Sample distances are 0, interval, 2*interval, ... plus the total length
    itself when it is not already hit.  A polyline needs >= 2 points and
    positive total length.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2 or points.shape[1] != 2:
        raise ValueError(f"polyline must be [K>=2, 2], got {points.shape}")
    seg = np.diff(points, axis=0)
    seg_len = np.sqrt((seg * seg).sum(axis=1))
    total = float(seg_len.sum())
    if total <= 0.0:
        raise ValueError("degenerate polyline: zero total length")
    n_inner = int(np.floor(total / interval))
    dists = [i * interval for i in range(n_inner + 1)]
    if total - dists[-1] > 1e-9:
        dists.append(total)
    else:
        dists[-1] = total
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    out = np.empty((len(dists), 2), dtype=np.float64)
    j = 0
    for i, d in enumerate(dists):
        while j < len(seg_len) - 1 and cum[j + 1] < d:
            j += 1
        t = 0.0 if seg_len[j] == 0 else (d - cum[j]) / seg_len[j]
        t = min(max(t, 0.0), 1.0)
        out[i] = points[j] + t * seg[j]
    return out


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance of points p [...,2] to the segment a-b; degenerate segments
    collapse to the point a."""
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = b - a
    den = float(d @ d)
    if den > 0.0:
        t = ((p - a) @ d) / den
        t = np.clip(t, 0.0, 1.0)
    else:
        t = np.zeros(p.shape[:-1])
    proj = a + t[..., None] * d
    e = p - proj
    return np.sqrt((e * e).sum(axis=-1))


def segment_projection(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Closest point on segment a-b for each p [...,2]."""
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = b - a
    den = float(d @ d)
    if den > 0.0:
        t = np.clip(((p - a) @ d) / den, 0.0, 1.0)
    else:
        t = np.zeros(p.shape[:-1])
    return a + t[..., None] * d


def points_to_polyline_distance(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Min distance of each of pts [N,2] to the polyline poly [K,2]."""
    pts = np.asarray(pts, dtype=np.float64)
    poly = np.asarray(poly, dtype=np.float64)
    if poly.shape[0] == 1:
        e = pts - poly[0]
        return np.sqrt((e * e).sum(axis=-1))
    best = np.full(pts.shape[0], np.inf)
    for k in range(poly.shape[0] - 1):
        np.minimum(best, point_segment_distance(pts, poly[k], poly[k + 1]), out=best)
    return best


def min_cross_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each row of a [N,2], distance to the nearest row of b [M,2]."""
    diff = a[:, None, :] - b[None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    return np.sqrt(d2.min(axis=1))
