"""Chamfer-distance evaluation of predicted vector maps.

Polylines are resampled every half meter of arc length (endpoints
always kept); the chamfer distance between two polylines is the
symmetric mean of nearest-sample distances.  Within each category,
predictions claim ground-truth elements greedily in descending
confidence order: a prediction takes the nearest still-unclaimed gt
whose chamfer distance clears the threshold, otherwise it counts as a
false positive.  Average precision integrates the interpolated
precision envelope over recall, pooling predictions across all scenes.

Two threshold settings are reported (hard 0.2/0.5/1.0 m, easy
0.5/1.0/1.5 m); each setting's mAP is the mean of its category-by-
threshold AP cells, skipping categories with no ground truth anywhere
in the split (those are listed as excluded).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import json

import numpy as np

from .config import CATEGORIES, EvalConfig
from .geometry import min_cross_distances, polyline_length, resample_polyline
from .maptypes import VectorMap

_DEGENERATE = 1e-9


def polyline_samples(points: np.ndarray, interval: float):
    """Resampled points, or None when the polyline has ~zero length
    (degenerate predictions happen with untrained models; they simply
    never match anything)."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 2 or polyline_length(points) <= _DEGENERATE:
        return None
    return resample_polyline(points, interval)


def chamfer_distance(a: np.ndarray, b: np.ndarray, interval: float = 0.5) -> float:
    """Symmetric chamfer distance between two non-degenerate polylines."""
    sa = polyline_samples(a, interval)
    sb = polyline_samples(b, interval)
    if sa is None or sb is None:
        raise ValueError("chamfer_distance requires non-degenerate polylines")
    return _chamfer_from_samples(sa, sb)


def _chamfer_from_samples(sa: np.ndarray, sb: np.ndarray) -> float:
    return 0.5 * (
        float(min_cross_distances(sa, sb).mean()) + float(min_cross_distances(sb, sa).mean())
    )


@dataclass
class CategoryScores:
    """One scene, one category: sorted confidences and the pred x gt
    chamfer matrix (inf where a prediction is degenerate)."""

    conf: np.ndarray  # [P] descending
    dist: np.ndarray  # [P, G]
    n_gt: int


def scene_scores(preds: list, gt_map: VectorMap, interval: float) -> dict:
    """Chamfer matrices for every category of one scene."""
    out = {}
    for cat in CATEGORIES:
        cat_preds = [p for p in preds if p.category == cat]
        order = sorted(
            range(len(cat_preds)), key=lambda i: (-cat_preds[i].confidence, i)
        )
        cat_preds = [cat_preds[i] for i in order]
        gts = gt_map.by_category(cat)
        gt_samples = [resample_polyline(g.points, interval) for g in gts]
        dist = np.full((len(cat_preds), len(gts)), np.inf)
        conf = np.array([p.confidence for p in cat_preds], dtype=np.float64)
        for i, p in enumerate(cat_preds):
            ps = polyline_samples(p.points, interval)
            if ps is None:
                continue
            for j, gs in enumerate(gt_samples):
                dist[i, j] = _chamfer_from_samples(ps, gs)
        out[cat] = CategoryScores(conf=conf, dist=dist, n_gt=len(gts))
    return out


def greedy_match_flags(scores: CategoryScores, threshold: float) -> np.ndarray:
    """True-positive flags per prediction, processed in confidence order:
    each takes the nearest unclaimed gt within the threshold."""
    p, g = scores.dist.shape
    claimed = np.zeros(g, dtype=bool)
    flags = np.zeros(p, dtype=bool)
    for i in range(p):
        # strictly below the threshold; a distance exactly at it misses
        best_j = -1
        best_d = threshold
        for j in range(g):
            if claimed[j]:
                continue
            d = scores.dist[i, j]
            if d < best_d:
                best_d = d
                best_j = j
        if best_j >= 0:
            claimed[best_j] = True
            flags[i] = True
    return flags


def average_precision(flags: np.ndarray, conf: np.ndarray, n_gt: int,
                      tiebreak: np.ndarray | None = None) -> float:
    """All-point interpolated AP.

    Predictions sort by descending confidence (ties by the caller's
    tiebreak array, then position); precision is interpolated to its
    running maximum from the right before integrating over recall.
    """
    if n_gt <= 0:
        raise ValueError("average_precision needs n_gt > 0")
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    conf = np.asarray(conf, dtype=np.float64)
    if tiebreak is None:
        tiebreak = np.zeros(flags.size)
    order = sorted(range(flags.size), key=lambda i: (-conf[i], tiebreak[i], i))
    f = flags[np.array(order)]
    tp = np.cumsum(f)
    fp = np.cumsum(~f)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for i in range(flags.size):
        if recall[i] > prev_r:
            ap += (recall[i] - prev_r) * env[i]
            prev_r = recall[i]
    return float(ap)


@dataclass
class EvalReport:
    settings: dict = field(default_factory=dict)
    gt_counts: dict = field(default_factory=dict)
    pred_counts: dict = field(default_factory=dict)
    scene_count: int = 0
    notes: list = field(default_factory=list)

    def map_for(self, setting: str) -> float:
        return self.settings[setting]["map"]

    def to_dict(self) -> dict:
        return {
            "settings": self.settings,
            "gt_counts": self.gt_counts,
            "pred_counts": self.pred_counts,
            "scene_count": self.scene_count,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = []
        for name, block in self.settings.items():
            thr = block["thresholds"]
            head = f"{name:<6} {'category':<14}" + "".join(f"  t={t:<5}" for t in thr)
            lines.append(head)
            for cat in CATEGORIES:
                cells = block["ap"].get(cat)
                if cells is None:
                    lines.append(f"{'':<6} {cat:<14}  (no ground truth; excluded)")
                    continue
                row = f"{'':<6} {cat:<14}"
                for t in thr:
                    row += f"  {cells[str(t)]:.4f} "
                lines.append(row)
            lines.append(f"{name:<6} mAP = {block['map']:.4f}")
            lines.append("")
        lines.append(f"scenes: {self.scene_count}  gt: {self.gt_counts}  preds: {self.pred_counts}")
        for n in self.notes:
            lines.append(f"note: {n}")
        return "\n".join(lines) + "\n"


def evaluate(pairs: list, cfg: EvalConfig, workers: int = 1) -> EvalReport:
    """pairs is a list of (predictions, gt VectorMap) per scene, in a
    fixed scene order.  Returns the two-setting AP report."""
    if not pairs:
        raise ValueError("evaluate needs at least one scene")

    def score(pair):
        preds, gt = pair
        return scene_scores(preds, gt, cfg.resample_interval)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            per_scene = list(ex.map(score, pairs))
    else:
        per_scene = [score(p) for p in pairs]

    report = EvalReport(scene_count=len(pairs))
    report.gt_counts = {
        cat: int(sum(s[cat].n_gt for s in per_scene)) for cat in CATEGORIES
    }
    report.pred_counts = {
        cat: int(sum(s[cat].conf.size for s in per_scene)) for cat in CATEGORIES
    }
    for name, thresholds in (("hard", cfg.hard), ("easy", cfg.easy)):
        ap_block = {}
        cells = []
        excluded = []
        for cat in CATEGORIES:
            if report.gt_counts[cat] == 0:
                ap_block[cat] = None
                excluded.append(cat)
                continue
            ap_block[cat] = {}
            conf = np.concatenate([s[cat].conf for s in per_scene])
            scene_idx = np.concatenate(
                [np.full(s[cat].conf.size, i) for i, s in enumerate(per_scene)]
            )
            for t in thresholds:
                flags = np.concatenate(
                    [greedy_match_flags(s[cat], t) for s in per_scene]
                )
                ap = average_precision(flags, conf, report.gt_counts[cat], tiebreak=scene_idx)
                ap_block[cat][str(t)] = ap
                cells.append(ap)
        if excluded:
            report.notes.append(
                f"{name}: no ground truth for {excluded}; mAP averages the remaining cells"
            )
        report.settings[name] = {
            "thresholds": list(thresholds),
            "ap": ap_block,
            "map": float(np.mean(cells)) if cells else 0.0,
            "excluded": excluded,
        }
    return report
