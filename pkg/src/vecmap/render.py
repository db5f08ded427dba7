"""Plain-text renderings: a two-panel SVG (ground truth left,
predictions right) and a PGM dump of a feature grid.

Output is deterministic byte for byte: coordinates are formatted with
two decimals and no timestamps or ids are embedded.
"""
from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .maptypes import VectorMap

_COLORS = {
    "ped_crossing": "#1f6fd6",
    "divider": "#d62828",
    "boundary": "#2a9d3e",
}
_SCALE = 4.0  # px per meter
_MARGIN = 12.0
_GAP = 24.0


def _panel_size(cfg: ModelConfig):
    w = (cfg.x_max - cfg.x_min) * _SCALE
    h = (cfg.y_max - cfg.y_min) * _SCALE
    return w, h


def _to_px(points: np.ndarray, cfg: ModelConfig, x_off: float):
    # svg y runs down; map y runs up
    px = (points[:, 0] - cfg.x_min) * _SCALE + x_off
    py = (cfg.y_max - points[:, 1]) * _SCALE + _MARGIN
    return px, py


def _polyline_svg(points: np.ndarray, color: str, cfg: ModelConfig,
                  x_off: float, opacity: float = 1.0) -> str:
    px, py = _to_px(np.asarray(points, dtype=np.float64), cfg, x_off)
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
    return (
        f'<polyline points="{pts}" fill="none" stroke="{color}" '
        f'stroke-width="1.50" stroke-opacity="{opacity:.2f}"/>'
    )


def render_svg(gt_map: VectorMap, preds: list, cfg: ModelConfig) -> str:
    """Two panels: ground truth and predictions (opacity follows
    confidence so tentative elements fade)."""
    pw, ph = _panel_size(cfg)
    total_w = 2 * pw + 2 * _MARGIN + _GAP
    total_h = ph + 2 * _MARGIN + 16.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.0f}" '
        f'height="{total_h:.0f}" viewBox="0 0 {total_w:.0f} {total_h:.0f}">',
        f'<rect width="{total_w:.0f}" height="{total_h:.0f}" fill="#ffffff"/>',
    ]
    for label, x_off in (("ground truth", _MARGIN), ("prediction", _MARGIN + pw + _GAP)):
        parts.append(
            f'<rect x="{x_off:.2f}" y="{_MARGIN:.2f}" width="{pw:.2f}" '
            f'height="{ph:.2f}" fill="#f5f5f0" stroke="#808080" stroke-width="1.00"/>'
        )
        parts.append(
            f'<text x="{x_off + 4.0:.2f}" y="{_MARGIN + ph + 14.0:.2f}" '
            f'font-family="monospace" font-size="11">{label}</text>'
        )
    for el in gt_map.elements:
        parts.append(_polyline_svg(el.points, _COLORS[el.category], cfg, _MARGIN))
    pred_off = _MARGIN + pw + _GAP
    for p in sorted(preds, key=lambda q: (-q.confidence, q.slot)):
        op = 0.35 + 0.65 * min(max(p.confidence, 0.0), 1.0)
        parts.append(_polyline_svg(p.points, _COLORS[p.category], cfg, pred_off, op))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def grid_pgm(features: np.ndarray) -> bytes:
    """Channel-mean of a [C,H,W] grid as a binary PGM (P5), min/max
    normalized to the 0..255 range."""
    mean = np.asarray(features, dtype=np.float64).mean(axis=0)
    lo, hi = float(mean.min()), float(mean.max())
    if hi - lo < 1e-12:
        img = np.zeros(mean.shape, dtype=np.uint8)
    else:
        img = np.round((mean - lo) / (hi - lo) * 255.0).astype(np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode() + img.tobytes()
