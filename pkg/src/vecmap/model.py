"""The full map-construction network: fusion -> query decoding -> heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .config import RunConfig
from .fusion import fuse_grids, init_fusion_params
from .grids import BevGrid
from .heads import (
    classification_head,
    decode_predictions,
    init_head_params,
    keypoint_head,
    mask_head,
)
from .interaction import decode_queries, init_interaction_params, init_query_bank
from .losses import total_loss
from .matching import match_scene
from .maptypes import VectorMap
from .optim import AdamW, exponential_lr
from .tensor import Tensor


@dataclass
class ModelOutputs:
    fused: BevGrid
    flow: object  # Tensor [2,H,W] or None when fusion is ablated
    class_logits: object  # Tensor [M, 4]
    points: dict  # category -> Tensor [M_c, N_c, 2] meters
    mask_logits: object  # Tensor [M, H, W]
    # keypoint estimates from intermediate decoder layers (same dict
    # shape as points); supervised alongside the final ones
    aux_points: list = None


class MapModel:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dtype = np.float32 if cfg.train.dtype == "float32" else np.float64
        self.coupled_fusion = cfg.ablation.fusion == "coupled"
        self.coupled_interaction = cfg.ablation.interaction == "coupled"
        rng = np.random.default_rng(cfg.seed)
        params: dict[str, Tensor] = {}
        init_fusion_params(params, rng, cfg.model.channels, self.dtype, self.coupled_fusion)
        init_query_bank(params, rng, cfg.model, self.dtype)
        init_interaction_params(params, rng, cfg.model, self.dtype, self.coupled_interaction)
        init_head_params(params, rng, cfg.model, self.dtype)
        self.params = params

    # ------------------------------------------------------------- forward

    def _grid(self, features: np.ndarray, modality: str) -> BevGrid:
        m = self.cfg.model
        if features.shape != (m.channels, m.grid_h, m.grid_w):
            raise ValueError(
                f"{modality} grid shape {features.shape} does not match the model "
                f"({m.channels}, {m.grid_h}, {m.grid_w})"
            )
        return BevGrid(
            modality=modality,
            features=Tensor(features.astype(self.dtype, copy=False)),
            cell_size=m.cell_size,
            origin=(m.y_min, m.x_min),
        )

    def forward(self, cam: np.ndarray, lidar: np.ndarray, record=None) -> ModelOutputs:
        m = self.cfg.model
        fused_grid, flow_field = fuse_grids(
            self._grid(cam, "camera"),
            self._grid(lidar, "lidar"),
            self.params,
            self.coupled_fusion,
            record=record,
        )
        fused = fused_grid.features
        bev_flat = ops.reshape(fused, (m.channels, m.grid_h * m.grid_w))
        bev_seq = ops.transpose_last2(bev_flat)
        pts, el, aux = decode_queries(bev_seq, self.params, m, self.coupled_interaction, record)
        return ModelOutputs(
            fused=fused_grid,
            flow=None if flow_field is None else flow_field.flow,
            class_logits=classification_head(el, self.params),
            points=keypoint_head(pts, self.params, m),
            mask_logits=mask_head(el, bev_flat, self.params, m),
            aux_points=aux,
        )

    # ------------------------------------------------------ training pieces

    def match(self, outputs: ModelOutputs, gt_map: VectorMap):
        return match_scene(
            outputs.class_logits.data, {c: t.data for c, t in outputs.points.items()},
            gt_map, self.cfg.model,
        )

    def loss(self, outputs: ModelOutputs, gt_map: VectorMap, gt_flow=None):
        match = self.match(outputs, gt_map)
        return total_loss(
            outputs, gt_map, match, self.cfg.model,
            gt_flow=gt_flow, use_flow=self.cfg.train.flow_loss,
        )

    def decode(self, outputs: ModelOutputs) -> list:
        return decode_predictions(
            outputs.class_logits.data,
            {c: t.data for c, t in outputs.points.items()},
            self.cfg.model,
        )

    def optimizer(self) -> AdamW:
        t = self.cfg.train
        return AdamW(self.params, lr=t.lr, weight_decay=t.weight_decay)

    def epoch_lr(self, epoch: int) -> float:
        t = self.cfg.train
        return exponential_lr(t.lr, t.lr_decay, epoch)

    # ---------------------------------------------------------- state dicts

    def state_dict(self) -> dict:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        mine = set(self.params)
        theirs = set(state)
        if mine != theirs:
            missing = sorted(mine - theirs)[:3]
            extra = sorted(theirs - mine)[:3]
            raise ValueError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            t = self.params[name]
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
            t.data = np.ascontiguousarray(arr.astype(self.dtype, copy=False)).copy()

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())
