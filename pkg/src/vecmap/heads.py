"""Prediction heads over the decoded descriptors.

* classification: element descriptor -> 4 logits (three categories plus
  background).
* keypoints: point descriptor -> sigmoid -> affine map onto the metric
  ranges, so raw head outputs always land inside the field of view.
* mask: projected element descriptor dotted with every BEV cell, giving
  a per-element spatial logit map.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .config import CATEGORIES, CLASS_COUNT, ModelConfig, slot_ranges
from .layers import apply_linear, apply_mlp2, linear_params, mlp2_params
from .maptypes import Prediction
from .tensor import Tensor


def init_head_params(params: dict, rng, cfg: ModelConfig, dtype) -> None:
    c = cfg.channels
    mlp2_params(params, "heads.cls", rng, c, c, CLASS_COUNT, dtype)
    mlp2_params(params, "heads.kp", rng, c, c, 2, dtype)
    linear_params(params, "heads.mask", rng, c, c, dtype)


def classification_head(elements, params: dict):
    return apply_mlp2(elements, params, "heads.cls")


def keypoint_head(points: dict, params: dict, cfg: ModelConfig) -> dict:
    """Per-category [M_c, N_c, 2] (x, y) predictions in meters."""
    dtype = params["heads.kp.w1.w"].dtype
    span = Tensor(np.array([cfg.x_max - cfg.x_min, cfg.y_max - cfg.y_min], dtype=dtype))
    low = Tensor(np.array([cfg.x_min, cfg.y_min], dtype=dtype))
    out = {}
    for cat in CATEGORIES:
        unit = ops.sigmoid(apply_mlp2(points[cat], params, "heads.kp"))
        out[cat] = ops.add(ops.mul(unit, span), low)
    return out


def mask_head(elements, bev_t, params: dict, cfg: ModelConfig):
    """bev_t is the fused grid as [C, H*W]; returns [M, H, W] logits."""
    proj = apply_linear(elements, params, "heads.mask")
    logits = ops.matmul(proj, bev_t)
    m = elements.shape[0]
    return ops.reshape(logits, (m, cfg.grid_h, cfg.grid_w))


def foreground_softmax(class_logits: np.ndarray) -> np.ndarray:
    x = class_logits - class_logits.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


def decode_predictions(class_logits: np.ndarray, keypoints: dict, cfg: ModelConfig) -> list:
    """Emit one Prediction per slot whose best foreground probability
    clears the confidence threshold.  The polyline comes from the slot's
    own point block; the category label follows the argmax foreground
    class."""
    probs = foreground_softmax(np.asarray(class_logits, dtype=np.float64))
    ranges = slot_ranges(cfg)
    preds = []
    for cat in CATEGORIES:
        lo, hi = ranges[cat]
        pts = np.asarray(keypoints[cat], dtype=np.float64)
        for slot in range(lo, hi):
            fg = probs[slot, : CLASS_COUNT - 1]
            conf = float(fg.max())
            if conf < cfg.confidence_threshold:
                continue
            label = CATEGORIES[int(fg.argmax())]
            preds.append(
                Prediction(
                    category=label,
                    points=pts[slot - lo].copy(),
                    confidence=conf,
                    slot=slot,
                )
            )
    return preds
