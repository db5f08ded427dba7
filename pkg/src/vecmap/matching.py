"""Training-time assignment: which slot owns which ground-truth element,
and which predicted point owns which ground-truth point.

Element assignment is a Hungarian matching per category with cost
  -log p(category) + 5 * mean point-to-curve distance.
Point matching is an order-preserving dynamic program: the K ground
truth points map to a strictly increasing subsequence of the N predicted
points under L1 cost, tried in both traversal directions; predicted
points left out are not free -- each pays 0.1 times its distance to the
ground-truth segment bridging its assigned neighbors, which pins
spare points onto the curve instead of letting them drift.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .config import CATEGORIES, COLLINEARITY_WEIGHT, MATCH_CURVE_WEIGHT, ModelConfig, slot_ranges
from .geometry import point_segment_distance, points_to_polyline_distance
from .heads import foreground_softmax
from .maptypes import VectorMap


@dataclass
class PointMatch:
    cost: float
    choice: np.ndarray  # [K] pred index assigned to oriented gt point k
    direction: int  # +1 forward, -1 reversed traversal of the gt points
    gt_oriented: np.ndarray  # [K, 2] gt points in the chosen direction


@dataclass
class ElementMatch:
    slot: int  # local slot inside the category block
    gt_index: int  # index into the category's gt list
    points: PointMatch


@dataclass
class MatchResult:
    per_category: dict = field(default_factory=dict)  # cat -> list[ElementMatch]

    def matched_count(self) -> int:
        return sum(len(v) for v in self.per_category.values())


def _penalty_cumsums(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """cum[r, j] = summed penalty distance of pred[:j] under row r.

    Row 0 measures against the first gt point, row k (1..K-1) against
    segment (gt[k-1], gt[k]), row K against the last gt point.
    """
    n = pred.shape[0]
    k = gt.shape[0]
    pen = np.empty((k + 1, n), dtype=np.float64)
    pen[0] = point_segment_distance(pred, gt[0], gt[0])
    for kk in range(1, k):
        pen[kk] = point_segment_distance(pred, gt[kk - 1], gt[kk])
    pen[k] = point_segment_distance(pred, gt[-1], gt[-1])
    cum = np.zeros((k + 1, n + 1), dtype=np.float64)
    np.cumsum(pen, axis=1, out=cum[:, 1:])
    return cum


def _l1_cost(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return np.abs(pred[:, None, :] - gt[None, :, :]).sum(axis=2)


def dynamic_point_match(pred: np.ndarray, gt: np.ndarray) -> PointMatch:
    """Best order-preserving assignment over both gt directions.

    Ties between directions resolve to forward.  Requires K <= N.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    n, k = pred.shape[0], gt.shape[0]
    if k > n:
        raise ValueError(f"need at least as many predicted points as gt points ({n} < {k})")
    if k < 1:
        raise ValueError("gt polyline is empty")
    best = None
    for direction in (1, -1):
        g = gt if direction == 1 else gt[::-1]
        cost, choice = kernels.dp_match(
            _l1_cost(pred, g), _penalty_cumsums(pred, g), COLLINEARITY_WEIGHT
        )
        if best is None or cost < best.cost:
            best = PointMatch(cost=cost, choice=choice, direction=direction,
                              gt_oriented=np.ascontiguousarray(g))
    return best


def evaluate_correspondence(pred: np.ndarray, gt_oriented: np.ndarray, choice) -> float:
    """Cost of one explicit correspondence under the matcher's objective.

    Shared by the matcher's callers and by tests that enumerate
    correspondences exhaustively; keeps `what is the cost of this
    assignment` defined in exactly one place.
    """
    pred = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt_oriented, dtype=np.float64)
    choice = np.asarray(choice, dtype=np.int64)
    k = g.shape[0]
    n = pred.shape[0]
    total = 0.0
    for kk in range(k):
        total += float(np.abs(pred[choice[kk]] - g[kk]).sum())
    bounds = np.concatenate([[-1], choice, [n]])
    segs = [(g[0], g[0])] + [(g[kk - 1], g[kk]) for kk in range(1, k)] + [(g[-1], g[-1])]
    for r in range(k + 1):
        a, b = segs[r]
        for j in range(bounds[r] + 1, bounds[r + 1]):
            total += COLLINEARITY_WEIGHT * float(point_segment_distance(pred[j], a, b))
    return total


def element_assignment(probs: np.ndarray, pred_points: np.ndarray, gts: list,
                       category_index: int) -> list:
    """Hungarian matching of category slots to gt elements.

    probs is [M_c, 4] softmax rows for this category's slots, pred_points
    [M_c, N_c, 2].  Returns (slot, gt_index) pairs sorted by gt index.
    """
    g = len(gts)
    if g == 0:
        return []
    m = probs.shape[0]
    if g > m:
        raise ValueError(f"{g} gt elements exceed the {m} available slots")
    cost = assignment_cost_matrix(probs, pred_points, gts, category_index)
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: rc[1])
    return pairs


def assignment_cost_matrix(probs, pred_points, gts, category_index) -> np.ndarray:
    """The matrix element_assignment minimizes over; exposed for oracles."""
    g = len(gts)
    m = probs.shape[0]
    cost = np.empty((m, g), dtype=np.float64)
    for j, gt in enumerate(gts):
        for i in range(m):
            d = points_to_polyline_distance(pred_points[i], gt.points).mean()
            cost[i, j] = -np.log(probs[i, category_index] + 1e-12) + MATCH_CURVE_WEIGHT * d
    return cost


def match_scene(class_logits: np.ndarray, keypoints: dict, gt_map: VectorMap,
                cfg: ModelConfig) -> MatchResult:
    """Assign every gt element to a slot of its own category, then match
    points inside each pair."""
    probs = foreground_softmax(np.asarray(class_logits, dtype=np.float64))
    ranges = slot_ranges(cfg)
    result = MatchResult()
    for ci, cat in enumerate(CATEGORIES):
        gts = gt_map.by_category(cat)
        lo, hi = ranges[cat]
        pts = np.asarray(keypoints[cat], dtype=np.float64)
        pairs = element_assignment(probs[lo:hi], pts, gts, ci)
        matches = []
        for slot, gt_index in pairs:
            pm = dynamic_point_match(pts[slot], gts[gt_index].points)
            matches.append(ElementMatch(slot=slot, gt_index=gt_index, points=pm))
        result.per_category[cat] = matches
    return result
