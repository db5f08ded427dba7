"""Vectorized map containers: ground truth and predictions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import CATEGORIES, POINTS_PER_ELEMENT


@dataclass
class MapElement:
    category: str
    points: np.ndarray  # [K, 2] (x, y) meters, ordered along the element

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.points.ndim != 2 or self.points.shape[1] != 2 or self.points.shape[0] < 2:
            raise ValueError(f"element points must be [K>=2, 2], got {self.points.shape}")
        if not np.isfinite(self.points).all():
            raise ValueError("element points must be finite")
        if (np.abs(np.diff(self.points, axis=0)).sum(axis=1) == 0).any():
            raise ValueError("element has duplicate consecutive points")


@dataclass
class Prediction:
    category: str
    points: np.ndarray  # [N, 2] meters
    confidence: float
    slot: int = -1


@dataclass
class VectorMap:
    elements: list = field(default_factory=list)

    def by_category(self, category: str) -> list:
        return [e for e in self.elements if e.category == category]

    def counts(self) -> dict:
        return {c: len(self.by_category(c)) for c in CATEGORIES}


def validate_point_budget(vmap: VectorMap) -> None:
    for e in vmap.elements:
        cap = POINTS_PER_ELEMENT[e.category]
        if e.points.shape[0] > cap:
            raise ValueError(
                f"{e.category} element has {e.points.shape[0]} points, budget is {cap}"
            )
