"""Cross-modal BEV fusion with flow-based camera alignment.

Two fusion modes share one entry point:

* coupled -- each modality projects the shared-width BEV sequence to
  Q/K/V, reads the other modality through scaled-dot attention, refines
  the pair (own values, borrowed context) with a conv block, then a small
  conv stack predicts a per-cell flow that warps the camera branch onto
  the lidar branch before the final fusing conv.
* concat -- one conv block over the raw channel concatenation; no flow.

Camera is the branch that gets warped: the synthetic sensor model
distorts camera rasters with a smooth disparity field while lidar stays
metrically honest, so alignment means dragging camera content onto the
lidar frame.
"""
from __future__ import annotations

from . import ops
from .grids import BevGrid, FlowField, base_grid
from .layers import apply_linear, conv_params, linear_params, position_code
from .tensor import Tensor, as_tensor


def init_fusion_params(params: dict, rng, c: int, dtype, coupled: bool) -> None:
    conv_params(params, "fusion.fuse", rng, c, 2 * c, dtype)
    if not coupled:
        return
    for mod in ("cam", "lidar"):
        for name in ("q", "k", "v"):
            linear_params(params, f"fusion.{mod}.{name}", rng, c, c, dtype)
        conv_params(params, f"fusion.{mod}.refine", rng, c, 2 * c, dtype)
    conv_params(params, "fusion.flow.c1", rng, c, 2 * c, dtype)
    conv_params(params, "fusion.flow.c2", rng, c, c, dtype)
    # Zero-initialized head: the first forward pass warps with exactly
    # zero flow, which is an identity, keeping early training stable.
    conv_params(params, "fusion.flow.head", rng, 2, c, dtype, zero=True)


def _to_seq(x, c: int, hw: int):
    return ops.transpose_last2(ops.reshape(x, (c, hw)))


def _to_grid(x, c: int, h: int, w: int):
    return ops.reshape(ops.transpose_last2(x), (c, h, w))


def coupled_fusion(cam, lidar, params: dict, record=None):
    """Full fusion path; returns (fused [C,H,W], flow [2,H,W])."""
    cam = as_tensor(cam)
    lidar = as_tensor(lidar)
    c, h, w = cam.shape
    hw = h * w
    seqs = {"cam": _to_seq(cam, c, hw), "lidar": _to_seq(lidar, c, hw)}
    # q/k see cell positions so cross-modal attention can learn the
    # near-identity correspondence quickly; values stay content-only
    pos = position_code(h, w, c, cam.dtype)
    proj = {}
    for mod in ("cam", "lidar"):
        with_pos = ops.add(seqs[mod], pos)
        proj[mod] = {
            "q": apply_linear(with_pos, params, f"fusion.{mod}.q"),
            "k": apply_linear(with_pos, params, f"fusion.{mod}.k"),
            "v": apply_linear(seqs[mod], params, f"fusion.{mod}.v"),
        }
    refined = {}
    for mod, other in (("cam", "lidar"), ("lidar", "cam")):
        borrowed, weights = ops.scaled_dot_attention(
            proj[mod]["q"], proj[other]["k"], proj[other]["v"], return_weights=True
        )
        if record is not None:
            record[f"fusion.{mod}_reads_{other}"] = weights.data
        pair = ops.concat_n(
            [_to_grid(proj[mod]["v"], c, h, w), _to_grid(borrowed, c, h, w)], axis=0
        )
        refined[mod] = ops.conv_block(
            pair, params[f"fusion.{mod}.refine.w"], params[f"fusion.{mod}.refine.b"]
        )
    flow_in = ops.concat_n([refined["cam"], refined["lidar"]], axis=0)
    t = ops.conv_block(flow_in, params["fusion.flow.c1.w"], params["fusion.flow.c1.b"])
    t = ops.conv_block(t, params["fusion.flow.c2.w"], params["fusion.flow.c2.b"])
    flow = ops.conv3x3(t, params["fusion.flow.head.w"], params["fusion.flow.head.b"])
    aligned = warp_features(refined["cam"], flow)
    fused = ops.conv_block(
        ops.concat_n([refined["lidar"], aligned], axis=0),
        params["fusion.fuse.w"],
        params["fusion.fuse.b"],
    )
    return fused, flow


def concat_fusion(cam, lidar, params: dict):
    """Ablation path: plain channel concatenation plus one conv block."""
    cam = as_tensor(cam)
    lidar = as_tensor(lidar)
    fused = ops.conv_block(
        ops.concat_n([cam, lidar], axis=0), params["fusion.fuse.w"], params["fusion.fuse.b"]
    )
    return fused, None


def warp_features(x, flow):
    """Resample x so output cell (h, w) reads x at (h, w) + flow[:, h, w]."""
    x = as_tensor(x)
    flow = as_tensor(flow)
    base = Tensor(base_grid(x.shape[1], x.shape[2], dtype=x.dtype))
    coords = ops.add(flow, base)
    return ops.bilinear_sample(x, coords)


def fuse_grids(cam_grid: BevGrid, lidar_grid: BevGrid, params: dict, coupled: bool, record=None):
    """Grid-level wrapper; returns (BevGrid of fused features, FlowField or None)."""
    if cam_grid.grid_shape != lidar_grid.grid_shape:
        raise ValueError(
            f"modality grids disagree: {cam_grid.grid_shape} vs {lidar_grid.grid_shape}"
        )
    if coupled:
        fused, flow = coupled_fusion(cam_grid.features, lidar_grid.features, params, record)
    else:
        fused, flow = concat_fusion(cam_grid.features, lidar_grid.features, params)
    out = cam_grid.with_features(fused, modality="fused")
    return out, (FlowField(flow) if flow is not None else None)
