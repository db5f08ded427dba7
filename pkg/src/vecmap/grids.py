"""BEV grid containers and the meters <-> cells coordinate maps.

Grid rows sweep the y (driving) axis, columns sweep x.  Cell (h, w) is
centered at metric position (x_min + (w + 0.5) * dx, y_min + (h + 0.5) * dy).
Features may be a numpy array on the data side or a Tensor inside the
model; both expose .shape the same way.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import ModelConfig


@dataclass
class BevGrid:
    modality: str
    features: object  # np.ndarray or Tensor, [C, H, W]
    cell_size: tuple  # (dy, dx) meters
    origin: tuple  # (y_min, x_min) meters

    @property
    def grid_shape(self) -> tuple:
        return self.features.shape[1], self.features.shape[2]

    def with_features(self, features, modality: str | None = None) -> "BevGrid":
        return replace(
            self, features=features, modality=self.modality if modality is None else modality
        )


@dataclass
class FlowField:
    """Per-cell (row, col) displacement in cell units, [2, H, W]."""

    flow: object


def grid_meta(cfg: ModelConfig) -> tuple:
    return cfg.cell_size, (cfg.y_min, cfg.x_min)


def meters_to_cells(points: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(x, y) meters -> fractional (row, col) cell coordinates."""
    points = np.asarray(points, dtype=np.float64)
    dy, dx = cfg.cell_size
    h = (points[..., 1] - cfg.y_min) / dy - 0.5
    w = (points[..., 0] - cfg.x_min) / dx - 0.5
    return np.stack([h, w], axis=-1)


def cells_to_meters(cells: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Fractional (row, col) -> (x, y) meters at cell centers."""
    cells = np.asarray(cells, dtype=np.float64)
    dy, dx = cfg.cell_size
    y = cfg.y_min + (cells[..., 0] + 0.5) * dy
    x = cfg.x_min + (cells[..., 1] + 0.5) * dx
    return np.stack([x, y], axis=-1)


def coordinate_ramps(h: int, w: int, dtype=np.float64) -> np.ndarray:
    """Two [H,W] planes holding normalized row and column positions.

    Rasterized content alone is translation-blind: a feature vector at an
    active cell does not say where that cell sits.  Real BEV encoders leak
    position through their geometry; these ramps stand in for that so
    coordinate regression has something to read.
    """
    rows = (np.arange(h, dtype=np.float64) + 0.5) / h
    cols = (np.arange(w, dtype=np.float64) + 0.5) / w
    grid_r = np.repeat(rows[:, None], w, axis=1)
    grid_c = np.repeat(cols[None, :], h, axis=0)
    return np.stack([grid_r, grid_c]).astype(dtype)


def base_grid(h: int, w: int, dtype=np.float64) -> np.ndarray:
    """Identity sampling positions [2,H,W]: coords(h,w) = (h, w)."""
    gh = np.repeat(np.arange(h, dtype=np.float64)[:, None], w, axis=1)
    gw = np.repeat(np.arange(w, dtype=np.float64)[None, :], h, axis=0)
    return np.stack([gh, gw]).astype(dtype)


def _sine_bank(n: int, dim: int) -> np.ndarray:
    """[n, dim] sin/cos pairs at geometric frequencies from one cycle per
    axis up to Nyquist, so nearby cells get sharply distinct codes."""
    pos = (np.arange(n, dtype=np.float64) + 0.5) / n
    freqs = np.geomspace(1.0, max(n / 2.0, 2.0), dim // 2)
    ang = 2.0 * np.pi * pos[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def sine_position_encoding(h: int, w: int, c: int, dtype=np.float64) -> np.ndarray:
    """Fixed [H*W, C] sine position code: half the channels encode the
    row, half the column.  Attention queries dot against these to learn
    location-targeted reads far faster than content alone allows."""
    if c < 4 or c % 4 != 0:
        raise ValueError("position encoding needs channels divisible by 4")
    half = c // 2
    rows = _sine_bank(h, half)
    cols = _sine_bank(w, half)
    code = np.empty((h * w, c), dtype=np.float64)
    code[:, :half] = np.repeat(rows, w, axis=0)
    code[:, half:] = np.tile(cols, (h, 1))
    return code.astype(dtype)
