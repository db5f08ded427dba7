"""Synthetic scene generation: maps, sensor-style BEV rasters, disparity.

A scene is a random road layout (two boundaries, a few lane dividers,
optional pedestrian crossings drawn as short transverse segments)
rasterized twice with different sensor personalities:

* camera -- sees the whole field, but its vertices jitter, its channels
  carry mixing noise, and the finished raster is distorted by a smooth
  random disparity field (the stand-in for imperfect view projection).
* lidar -- metrically honest (no jitter, no distortion) but returns
  nothing beyond its effective range and drops random cells.

Category rasters plus two coordinate ramp planes pass through a fixed
random channel projection (one per modality per dataset, derived from
the master seed) so the grids look like encoder features rather than
labeled masks; the ramps carry the positional information a real BEV
backbone would leak, without which coordinate regression has nothing to
read.  The ground-truth flow is defined in warp convention: sampling the
distorted camera raster at (cell + flow) recovers the clean raster, so
the distortion applied to the raster is the flow's fixed-point inverse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import CATEGORIES, ModelConfig, SceneConfig
from .grids import base_grid, coordinate_ramps, meters_to_cells
from .maptypes import MapElement, VectorMap, validate_point_budget


@dataclass
class Scene:
    scene_id: str
    gt_map: VectorMap
    cam: np.ndarray  # [C,H,W] float32, distorted
    lidar: np.ndarray  # [C,H,W] float32
    gt_flow: np.ndarray  # [2,H,W] float32, cell units
    seed: int


# ------------------------------------------------------------- map layout


def generate_map(mcfg: ModelConfig, scfg: SceneConfig, rng: np.random.Generator) -> VectorMap:
    y_lo, y_hi = mcfg.y_min + 1.0, mcfg.y_max - 1.0
    x_lo, x_hi = mcfg.x_min + 0.7, mcfg.x_max - 0.7
    span_x = mcfg.x_max - mcfg.x_min

    knots_y = np.linspace(mcfg.y_min, mcfg.y_max, 4)
    knots_c = rng.uniform(-span_x * 0.13, span_x * 0.13, size=4)
    half = rng.uniform(span_x * 0.23, span_x * 0.4)

    def center(y):
        return np.interp(y, knots_y, knots_c)

    def left(y):
        return np.clip(center(y) - half, x_lo, x_hi)

    def right(y):
        return np.clip(center(y) + half, x_lo, x_hi)

    elements = []
    for side in (left, right):
        n_piv = int(rng.integers(scfg.boundary_pivots[0], scfg.boundary_pivots[1] + 1))
        ys = np.linspace(y_lo, y_hi, n_piv)
        xs = side(ys) + rng.normal(0.0, 0.15, size=n_piv)
        xs = np.clip(xs, x_lo, x_hi)
        elements.append(MapElement("boundary", np.stack([xs, ys], axis=1)))

    n_div = int(rng.integers(scfg.dividers[0], scfg.dividers[1] + 1))
    if n_div > 0:
        candidate_fracs = np.linspace(0.2, 0.8, 5)
        picks = np.sort(rng.choice(5, size=min(n_div, 5), replace=False))
        for frac_base in candidate_fracs[picks]:
            frac = frac_base + rng.uniform(-0.04, 0.04)
            n_piv = int(rng.integers(scfg.divider_pivots[0], scfg.divider_pivots[1] + 1))
            ys = np.linspace(y_lo + 1.0, y_hi - 1.0, n_piv)
            xs = left(ys) + frac * (right(ys) - left(ys)) + rng.normal(0.0, 0.2, size=n_piv)
            xs = np.clip(xs, x_lo, x_hi)
            elements.append(MapElement("divider", np.stack([xs, ys], axis=1)))

    n_cross = int(rng.integers(scfg.crossings[0], scfg.crossings[1] + 1))
    placed = []
    attempts = 0
    while len(placed) < n_cross and attempts < 40:
        attempts += 1
        yc = float(rng.uniform(y_lo + 5.0, y_hi - 5.0))
        if any(abs(yc - p) < 8.0 for p in placed):
            continue
        placed.append(yc)
        margin = 1.5
        ya = yc + float(rng.uniform(-0.8, 0.8))
        yb = yc + float(rng.uniform(-0.8, 0.8))
        a = (float(left(np.array(yc))) + margin, ya)
        b = (float(right(np.array(yc))) - margin, yb)
        if abs(a[0] - b[0]) < 2.0:
            continue
        elements.append(MapElement("ped_crossing", np.array([a, b])))

    vmap = VectorMap(elements=elements)
    validate_point_budget(vmap)
    return vmap


# ------------------------------------------------------------ rasterizing


def rasterize_map(vmap: VectorMap, mcfg: ModelConfig, scfg: SceneConfig,
                  rng: np.random.Generator | None = None, jitter: float = 0.0) -> np.ndarray:
    """Per-category soft rasters [3, H, W]; optional vertex jitter in meters."""
    out = np.zeros((len(CATEGORIES), mcfg.grid_h, mcfg.grid_w), dtype=np.float64)
    for ci, cat in enumerate(CATEGORIES):
        for e in vmap.by_category(cat):
            pts = e.points
            if jitter > 0.0 and rng is not None:
                pts = pts + rng.normal(0.0, jitter, size=pts.shape)
            cells = meters_to_cells(pts, mcfg)
            segs = np.ascontiguousarray(np.concatenate([cells[:-1], cells[1:]], axis=1))
            np.maximum(
                out[ci],
                kernels.rasterize_soft(segs, mcfg.grid_h, mcfg.grid_w, scfg.soft_sigma),
                out=out[ci],
            )
    return out


def modality_projection(rng: np.random.Generator, channels: int) -> np.ndarray:
    """Fixed random mixing of (3 category + 2 ramp) planes into C channels."""
    return rng.normal(0.0, 1.0, size=(channels, len(CATEGORIES) + 2)) / np.sqrt(5.0)


def render_modality(vmap: VectorMap, mcfg: ModelConfig, scfg: SceneConfig, modality: str,
                    rng: np.random.Generator, projection: np.ndarray) -> np.ndarray:
    """Project the scene into one modality's [C, H, W] feature grid."""
    if modality not in ("camera", "lidar"):
        raise ValueError(f"unknown modality {modality!r}")
    h, w = mcfg.grid_h, mcfg.grid_w
    jitter = scfg.camera_jitter if modality == "camera" else 0.0
    raster = rasterize_map(vmap, mcfg, scfg, rng=rng, jitter=jitter)
    planes = np.concatenate([raster, coordinate_ramps(h, w)], axis=0)
    feats = (projection @ planes.reshape(planes.shape[0], h * w)).reshape(-1, h, w)
    c = feats.shape[0]
    if modality == "camera":
        if scfg.mixing_noise > 0.0:
            mix = rng.normal(0.0, 1.0, size=(c, c)) / np.sqrt(c)
            feats = feats + scfg.mixing_noise * (mix @ feats.reshape(c, -1)).reshape(feats.shape)
        if scfg.feature_noise > 0.0:
            feats = feats + rng.normal(0.0, scfg.feature_noise, size=feats.shape)
    else:
        ys = mcfg.y_min + (np.arange(h) + 0.5) * mcfg.cell_size[0]
        feats[:, np.abs(ys) > scfg.lidar_range, :] = 0.0
        if scfg.lidar_dropout > 0.0:
            drop = rng.random(size=(h, w)) < scfg.lidar_dropout
            feats[:, drop] = 0.0
    return feats


# --------------------------------------------------------------- disparity


def smooth_flow_field(mcfg: ModelConfig, scfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Random smooth [2,H,W] flow: coarse 5x3 field, bilinearly upsampled."""
    h, w = mcfg.grid_h, mcfg.grid_w
    coarse = rng.uniform(-scfg.disparity_max, scfg.disparity_max, size=(2, 5, 3))
    rows = np.linspace(0.0, 4.0, h)
    cols = np.linspace(0.0, 2.0, w)
    ph = np.repeat(rows[:, None], w, axis=1)
    pw = np.repeat(cols[None, :], h, axis=0)
    return kernels.bilinear_forward(coarse, ph, pw)


def invert_flow(flow: np.ndarray, iterations: int = 10) -> np.ndarray:
    """Fixed-point inverse g of f: g(p) = -f(p + g(p)).

    Warping with f after displacing by g lands back at p, up to
    interpolation error, for smooth fields well below unit gradient.
    """
    h, w = flow.shape[1], flow.shape[2]
    base = base_grid(h, w)
    g = -flow
    for _ in range(iterations):
        coords = base + g
        f_at = kernels.bilinear_forward(flow, coords[0], coords[1])
        g = -f_at
    return g


def warp_array(x: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Data-plane warp: output(p) = x(p + flow(p)), zero outside."""
    base = base_grid(x.shape[1], x.shape[2], dtype=x.dtype)
    coords = base + flow.astype(x.dtype, copy=False)
    return kernels.bilinear_forward(x, np.ascontiguousarray(coords[0]), np.ascontiguousarray(coords[1]))


def apply_disparity(features: np.ndarray, mcfg: ModelConfig, scfg: SceneConfig,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Distort a camera grid; returns (distorted, gt_flow) with the warp
    convention warp(distorted, gt_flow) ~= features."""
    if scfg.disparity_max == 0.0:
        h, w = features.shape[1], features.shape[2]
        return features.copy(), np.zeros((2, h, w), dtype=features.dtype)
    flow = smooth_flow_field(mcfg, scfg, rng)
    inverse = invert_flow(flow)
    distorted = warp_array(features, inverse.astype(features.dtype))
    return distorted, flow.astype(features.dtype)


# ----------------------------------------------------------------- scenes


def build_scene(scene_id: str, mcfg: ModelConfig, scfg: SceneConfig, seed: int,
                cam_proj: np.ndarray, lidar_proj: np.ndarray) -> Scene:
    rng = np.random.default_rng(seed)
    vmap = generate_map(mcfg, scfg, rng)
    cam_clean = render_modality(vmap, mcfg, scfg, "camera", rng, cam_proj)
    cam, gt_flow = apply_disparity(cam_clean.astype(np.float32), mcfg, scfg, rng)
    lidar = render_modality(vmap, mcfg, scfg, "lidar", rng, lidar_proj).astype(np.float32)
    return Scene(
        scene_id=scene_id,
        gt_map=vmap,
        cam=cam.astype(np.float32),
        lidar=lidar,
        gt_flow=gt_flow.astype(np.float32),
        seed=seed,
    )


def scene_seeds(master_seed: int, count: int) -> list[int]:
    """Stable per-scene seeds derived from one master seed."""
    ss = np.random.SeedSequence(master_seed)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in ss.spawn(count)]


def dataset_projections(master_seed: int, channels: int) -> tuple[np.ndarray, np.ndarray]:
    """The two fixed per-dataset channel projections (camera, lidar)."""
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0x9E3779B9]))
    return modality_projection(rng, channels), modality_projection(rng, channels)
