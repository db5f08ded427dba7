"""Training objective: weighted classification, point regression, mask,
and flow terms.

The point term reuses the matcher's correspondence: matched points pay
L1 to their gt point, unmatched points pay the collinearity penalty
(0.1 x Euclidean distance to their bridging gt segment, realized as the
distance to a detached projection target so the value equals the
matcher's objective while the gradient pulls straight at the curve).
Each element's point total is normalized by its gt point count, then
averaged over matched elements.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .config import (
    BACKGROUND_CLASS_WEIGHT,
    BACKGROUND_INDEX,
    CATEGORIES,
    COLLINEARITY_WEIGHT,
    LOSS_WEIGHTS,
    ModelConfig,
    slot_ranges,
)
from .geometry import segment_projection
from .grids import meters_to_cells
from .matching import MatchResult
from .maptypes import VectorMap
from .tensor import Tensor
from . import kernels

_EPS = 1e-12


def element_mask_target(points_m: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """One-cell-thick rasterization of a gt polyline, [H, W] float."""
    cells = meters_to_cells(points_m, cfg)
    segs = np.concatenate([cells[:-1], cells[1:]], axis=1)
    return kernels.rasterize_mask(
        np.ascontiguousarray(segs), cfg.grid_h, cfg.grid_w
    ).astype(np.float64)


def classification_loss(class_logits, match: MatchResult, cfg: ModelConfig):
    m_total = class_logits.shape[0]
    targets = np.full(m_total, BACKGROUND_INDEX, dtype=np.int64)
    weights = np.full(m_total, BACKGROUND_CLASS_WEIGHT, dtype=np.float64)
    ranges = slot_ranges(cfg)
    for ci, cat in enumerate(CATEGORIES):
        lo, _ = ranges[cat]
        for em in match.per_category.get(cat, []):
            targets[lo + em.slot] = ci
            weights[lo + em.slot] = 1.0
    return ops.cross_entropy_logits(class_logits, targets, weights)


def keypoint_loss(points: dict, match: MatchResult, dtype):
    """Matched-L1 plus collinearity penalty, value-consistent with the
    matcher's reported cost (modulo the sqrt epsilon)."""
    total_matched = match.matched_count()
    if total_matched == 0:
        return Tensor(np.zeros((), dtype=dtype)), 0
    terms = []
    for cat in CATEGORIES:
        matches = match.per_category.get(cat, [])
        if not matches:
            continue
        pts_t = points[cat]
        _, n, _ = pts_t.shape
        idx = np.array([em.slot for em in matches], dtype=np.int64)
        g = len(matches)
        l1_target = np.zeros((g, n, 2))
        l1_w = np.zeros((g, n, 1))
        pen_target = np.zeros((g, n, 2))
        pen_w = np.zeros((g, n))
        pred_np = pts_t.data
        for row, em in enumerate(matches):
            pm = em.points
            k = pm.gt_oriented.shape[0]
            scale = 1.0 / (k * total_matched)
            for kk in range(k):
                l1_target[row, pm.choice[kk]] = pm.gt_oriented[kk]
                l1_w[row, pm.choice[kk], 0] = scale
            bounds = np.concatenate([[-1], pm.choice, [n]])
            segs = (
                [(pm.gt_oriented[0], pm.gt_oriented[0])]
                + [(pm.gt_oriented[kk - 1], pm.gt_oriented[kk]) for kk in range(1, k)]
                + [(pm.gt_oriented[-1], pm.gt_oriented[-1])]
            )
            for r in range(k + 1):
                a, b = segs[r]
                for j in range(bounds[r] + 1, bounds[r + 1]):
                    pen_target[row, j] = segment_projection(
                        pred_np[idx[row], j].astype(np.float64), a, b
                    )
                    pen_w[row, j] = COLLINEARITY_WEIGHT * scale
        sel = ops.index_select(pts_t, 0, idx)
        l1_term = ops.sum_all(
            ops.mul(Tensor(l1_w.astype(dtype)), ops.abs_(ops.sub(sel, Tensor(l1_target.astype(dtype)))))
        )
        d = ops.sub(sel, Tensor(pen_target.astype(dtype)))
        dist = ops.sqrt(ops.add_scalar(ops.sum_axis(ops.mul(d, d), -1), _EPS))
        pen_term = ops.sum_all(ops.mul(Tensor(pen_w.astype(dtype)), dist))
        terms.append(ops.add(l1_term, pen_term))
    out = terms[0]
    for t in terms[1:]:
        out = ops.add(out, t)
    return out, total_matched


def mask_loss(mask_logits, match: MatchResult, gt_map: VectorMap, cfg: ModelConfig, dtype):
    ranges = slot_ranges(cfg)
    idx = []
    targets = []
    for cat in CATEGORIES:
        lo, _ = ranges[cat]
        gts = gt_map.by_category(cat)
        for em in match.per_category.get(cat, []):
            idx.append(lo + em.slot)
            targets.append(element_mask_target(gts[em.gt_index].points, cfg))
    if not idx:
        return Tensor(np.zeros((), dtype=dtype))
    sel = ops.index_select(mask_logits, 0, np.array(idx, dtype=np.int64))
    return ops.bce_with_logits(sel, np.stack(targets).astype(dtype))


def flow_loss(flow, gt_flow: np.ndarray, dtype):
    """Mean endpoint error of the predicted alignment flow, cell units."""
    d = ops.sub(flow, Tensor(np.asarray(gt_flow, dtype=dtype)))
    return ops.mean_all(ops.sqrt(ops.add_scalar(ops.sum_axis(ops.mul(d, d), 0), _EPS)))


def total_loss(outputs, gt_map: VectorMap, match: MatchResult, cfg: ModelConfig,
               gt_flow=None, use_flow: bool = True):
    """Returns (scalar Tensor, component dict of plain floats)."""
    dtype = outputs.class_logits.dtype
    cls = classification_loss(outputs.class_logits, match, cfg)
    kp, _ = keypoint_loss(outputs.points, match, dtype)
    # intermediate layers share the final assignment, so every depth pulls
    # toward the same target; component value stays the per-layer mean
    aux = getattr(outputs, "aux_points", None) or []
    if aux:
        for est in aux:
            kp = ops.add(kp, keypoint_loss(est, match, dtype)[0])
        kp = ops.scale(kp, 1.0 / (len(aux) + 1))
    msk = mask_loss(outputs.mask_logits, match, gt_map, cfg, dtype)
    parts = {
        "class": float(cls.data),
        "keypoint": float(kp.data),
        "mask": float(msk.data),
        "flow": 0.0,
    }
    total = ops.add(
        ops.add(ops.scale(cls, LOSS_WEIGHTS["class"]), ops.scale(kp, LOSS_WEIGHTS["keypoint"])),
        ops.scale(msk, LOSS_WEIGHTS["mask"]),
    )
    if use_flow and outputs.flow is not None and gt_flow is not None:
        fl = flow_loss(outputs.flow, gt_flow, dtype)
        parts["flow"] = float(fl.data)
        total = ops.add(total, ops.scale(fl, LOSS_WEIGHTS["flow"]))
    parts["total"] = float(total.data)
    return total, parts
