"""Query decoding over the fused BEV: point and element descriptors that
talk to the grid, to their own group, and to each other.

Element slots are partitioned by category (crossing / divider / boundary
blocks in that order); each slot owns a fixed budget of point queries.
One decoder layer runs three stages:

1. point level -- per element, its point descriptors are flattened and
   mixed into an element-aware feature whose inner product with the BEV
   features becomes an additive attention bias (a content mask); the
   points then read the BEV through biased cross-attention, exchange
   within the element via self-attention, and pass an FFN.
2. element level -- all element descriptors flatten into one global
   feature, masking the BEV the same way; elements read the BEV, attend
   to each other, FFN.
3. exchange -- points and their element update each other
   simultaneously from the stage-2 values: each point reads its single
   element (a one-key attention, so the element descriptor is added
   whole), each element attends over its own points.

The ablated variant replaces all of it with one unbiased cross-attention
read of the BEV for points and for elements.

Two things keep BEV attention from starting (and staying) uniform over
the 2500 cells, which plain dot-product attention does for a long time
at small step budgets: a fixed sine position code added to the key and
value paths of every BEV read, and, for the point level, a Gaussian
logit prior centered on a learnable reference anchor per point query.
The value-path code is what lets the keypoint head recover coordinates
at all: attention output is a convex blend of values, so without it a
descriptor knows what it read but not where.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .config import CATEGORIES, ModelConfig, QUERY_INIT_SCALE, slot_ranges
from .grids import meters_to_cells
from .layers import (
    apply_linear,
    apply_mlp2,
    attn_params,
    cell_centers,
    cross_attention_block,
    ffn_params,
    ffn_block,
    linear_params,
    mlp2_params,
    position_code,
    self_attention_block,
)
from .tensor import Tensor

# widths (in cells) of the Gaussian attention prior around each point
# query's reference location; later layers re-center on the previous
# layer's keypoint estimate and tighten
PRIOR_SIGMA = 2.0
REFINE_SIGMA = 1.5


def bev_position_code(cfg: ModelConfig, dtype) -> Tensor:
    return position_code(cfg.grid_h, cfg.grid_w, cfg.channels, dtype)


def init_query_bank(params: dict, rng, cfg: ModelConfig, dtype) -> None:
    c = cfg.channels
    for cat in CATEGORIES:
        m, n = int(cfg.caps[cat]), int(cfg.points[cat])
        params[f"queries.pt.{cat}"] = Tensor(
            rng.normal(0.0, QUERY_INIT_SCALE, size=(m, n, c)).astype(dtype), requires_grad=True
        )
        params[f"queries.pt_pos.{cat}"] = Tensor(
            rng.normal(0.0, QUERY_INIT_SCALE, size=(n, c)).astype(dtype), requires_grad=True
        )
        # learnable reference anchors, [M,N,2] cell coordinates: slot m
        # starts as a vertical polyline at column (m+.5)/M spanning rows
        ref = np.empty((m, n, 2))
        ref[:, :, 0] = ((np.arange(n) + 0.5) / n * cfg.grid_h)[None, :]
        ref[:, :, 1] = ((np.arange(m) + 0.5) / m * cfg.grid_w)[:, None]
        ref += rng.normal(0.0, 0.5, size=ref.shape)
        params[f"queries.ref.{cat}"] = Tensor(ref.astype(dtype), requires_grad=True)
    m_total = cfg.total_elements
    params["queries.el"] = Tensor(
        rng.normal(0.0, QUERY_INIT_SCALE, size=(m_total, c)).astype(dtype), requires_grad=True
    )
    params["queries.el_pos"] = Tensor(
        rng.normal(0.0, QUERY_INIT_SCALE, size=(m_total, c)).astype(dtype), requires_grad=True
    )


def init_interaction_params(params: dict, rng, cfg: ModelConfig, dtype, coupled: bool) -> None:
    c = cfg.channels
    if not coupled:
        attn_params(params, "decode.single.pt", rng, c, dtype)
        attn_params(params, "decode.single.el", rng, c, dtype)
        return
    m_total = cfg.total_elements
    for l in range(cfg.decoder_layers):
        base = f"decode.l{l}"
        for cat in CATEGORIES:
            n = int(cfg.points[cat])
            mlp2_params(params, f"{base}.pt.elemmlp.{cat}", rng, n * c, c, c, dtype)
        attn_params(params, f"{base}.pt.cross", rng, c, dtype)
        attn_params(params, f"{base}.pt.self", rng, c, dtype)
        ffn_params(params, f"{base}.pt.ffn", rng, c, dtype)
        mlp2_params(params, f"{base}.el.globalmlp", rng, m_total * c, c, c, dtype)
        attn_params(params, f"{base}.el.cross", rng, c, dtype)
        attn_params(params, f"{base}.el.self", rng, c, dtype)
        ffn_params(params, f"{base}.el.ffn", rng, c, dtype)
        for name in ("ptq", "ptk", "elq", "elk"):
            linear_params(params, f"{base}.ex.{name}", rng, c, c, dtype)


def _anchor_prior(ref, cfg: ModelConfig, dtype):
    """[M,N,HW] Gaussian logit prior around each point's reference cell.

    Sharp from the first step, so the BEV read is local even before the
    q/k path has learned anything; gradients move the anchors."""
    cell_r, cell_c = cell_centers(cfg.grid_h, cfg.grid_w, dtype)
    hw = cfg.grid_h * cfg.grid_w
    rr = ops.slice_axis(ref, 2, 0, 1)  # [M,N,1]
    cc = ops.slice_axis(ref, 2, 1, 2)
    dr = ops.sub(rr, ops.reshape(cell_r, (1, 1, hw)))
    dc = ops.sub(cc, ops.reshape(cell_c, (1, 1, hw)))
    d2 = ops.add(ops.mul(dr, dr), ops.mul(dc, dc))
    return ops.scale(d2, -1.0 / (2.0 * PRIOR_SIGMA * PRIOR_SIGMA))


def _refined_prior(points_m: np.ndarray, cfg: ModelConfig, dtype) -> Tensor:
    """Constant [M,N,HW] Gaussian prior centered on decoded keypoints.

    Deliberately detached: the next layer reads AROUND the previous
    estimate, and the estimate itself is supervised directly, so no
    gradient needs to flow through the re-centering."""
    cells = meters_to_cells(points_m, cfg).astype(dtype)  # [M,N,2] (row, col)
    rows = np.arange(cfg.grid_h, dtype=dtype)
    cols = np.arange(cfg.grid_w, dtype=dtype)
    cell_r = np.repeat(rows, cfg.grid_w)
    cell_c = np.tile(cols, cfg.grid_h)
    dr = cells[..., 0:1] - cell_r[None, None, :]
    dc = cells[..., 1:2] - cell_c[None, None, :]
    prior = (dr * dr + dc * dc) * (-1.0 / (2.0 * REFINE_SIGMA * REFINE_SIGMA))
    return Tensor(prior.astype(dtype, copy=False))


def _point_level(pts: dict, bev_seq, bev_t, bev_pos, priors: dict, params: dict,
                 layer: int, cfg: ModelConfig, record):
    c = cfg.channels
    hw = bev_seq.shape[0]
    base = f"decode.l{layer}.pt"
    out = {}
    for cat in CATEGORIES:
        d = pts[cat]
        m, n = d.shape[0], d.shape[1]
        elem_feat = apply_mlp2(
            ops.reshape(d, (m, n * c)), params, f"{base}.elemmlp.{cat}"
        )
        mask = ops.matmul(elem_feat, bev_t)  # [M_c, HW] content mask
        if record is not None:
            record[f"l{layer}.pt.mask.{cat}"] = mask.data
        bias = ops.add(ops.reshape(mask, (m, 1, hw)), priors[cat])
        d = cross_attention_block(
            d, bev_seq, params, f"{base}.cross",
            bias=bias, query_pos=params[f"queries.pt_pos.{cat}"], key_pos=bev_pos,
            value_pos=bev_pos,
            record=record, record_key=f"l{layer}.pt.cross.{cat}",
        )
        d = self_attention_block(
            d, params, f"{base}.self", record=record, record_key=f"l{layer}.pt.self.{cat}"
        )
        out[cat] = ffn_block(d, params, f"{base}.ffn")
    return out


def _element_level(el, bev_seq, bev_t, bev_pos, params: dict, layer: int,
                   cfg: ModelConfig, record):
    c = cfg.channels
    m = el.shape[0]
    base = f"decode.l{layer}.el"
    global_feat = apply_mlp2(ops.reshape(el, (1, m * c)), params, f"{base}.globalmlp")
    mask = ops.matmul(global_feat, bev_t)  # [1, HW], shared by every element row
    if record is not None:
        record[f"l{layer}.el.mask"] = mask.data
    el = cross_attention_block(
        el, bev_seq, params, f"{base}.cross",
        bias=mask, query_pos=params["queries.el_pos"], key_pos=bev_pos,
        value_pos=bev_pos,
        record=record, record_key=f"l{layer}.el.cross",
    )
    el = self_attention_block(el, params, f"{base}.self", record=record,
                              record_key=f"l{layer}.el.self")
    return ffn_block(el, params, f"{base}.ffn")


def _exchange(pts: dict, el, params: dict, layer: int, cfg: ModelConfig, record):
    """Simultaneous point <-> element update; both sides read pre-update values."""
    base = f"decode.l{layer}.ex"
    ranges = slot_ranges(cfg)
    new_pts = {}
    new_el_parts = []
    for cat in CATEGORIES:
        d = pts[cat]
        m, n, c = d.shape
        e = ops.slice_axis(el, 0, *ranges[cat])  # [M_c, C]
        qp = apply_linear(d, params, f"{base}.ptq")
        kp = apply_linear(d, params, f"{base}.ptk")
        qe = apply_linear(e, params, f"{base}.elq")
        ke = apply_linear(e, params, f"{base}.elk")
        e3 = ops.reshape(e, (m, 1, c))
        # Each point sees exactly one key (its element), so the softmax is
        # identically 1 and the whole element descriptor flows in.
        pt_read, w_pt = ops.scaled_dot_attention(
            qp, ops.reshape(ke, (m, 1, c)), e3, return_weights=True
        )
        el_read, w_el = ops.scaled_dot_attention(
            ops.reshape(qe, (m, 1, c)), kp, d, return_weights=True
        )
        if record is not None:
            record[f"l{layer}.ex.pt.{cat}"] = w_pt.data
            record[f"l{layer}.ex.el.{cat}"] = w_el.data
        new_pts[cat] = ops.add(d, pt_read)
        new_el_parts.append(ops.add(e, ops.reshape(el_read, (m, c))))
    return new_pts, ops.concat_n(new_el_parts, axis=0)


def coupled_decode(bev_seq, params: dict, cfg: ModelConfig, record=None):
    """bev_seq is the fused grid flattened to [H*W, C].  Returns
    (points: {category: [M_c, N_c, C]}, elements: [M_total, C],
    aux_points: per intermediate layer, the keypoint head applied to that
    layer's point descriptors).

    Coarse-to-fine: layer 0 reads around the learnable anchors; each
    later layer reads around the keypoints decoded from the previous
    layer's descriptors.  The intermediate estimates are returned so the
    loss can supervise them; without that the re-centering would chase
    unconstrained targets.
    """
    from .heads import keypoint_head

    bev_t = ops.transpose_last2(bev_seq)
    bev_pos = bev_position_code(cfg, bev_seq.dtype)
    priors = {
        cat: _anchor_prior(params[f"queries.ref.{cat}"], cfg, bev_seq.dtype)
        for cat in CATEGORIES
    }
    pts = {cat: params[f"queries.pt.{cat}"] for cat in CATEGORIES}
    el = params["queries.el"]
    aux = []
    for layer in range(cfg.decoder_layers):
        pts = _point_level(pts, bev_seq, bev_t, bev_pos, priors, params, layer, cfg, record)
        el = _element_level(el, bev_seq, bev_t, bev_pos, params, layer, cfg, record)
        pts, el = _exchange(pts, el, params, layer, cfg, record)
        if layer + 1 < cfg.decoder_layers:
            est = keypoint_head(pts, params, cfg)
            aux.append(est)
            priors = {
                cat: _refined_prior(est[cat].data, cfg, bev_seq.dtype)
                for cat in CATEGORIES
            }
    return pts, el, aux


def single_decode(bev_seq, params: dict, cfg: ModelConfig, record=None):
    """Ablation decoder: one plain cross-attention read for each query set.
    No refinement, so the aux list is empty."""
    bev_pos = bev_position_code(cfg, bev_seq.dtype)
    pts = {}
    for cat in CATEGORIES:
        pts[cat] = cross_attention_block(
            params[f"queries.pt.{cat}"], bev_seq, params, "decode.single.pt",
            query_pos=params[f"queries.pt_pos.{cat}"], key_pos=bev_pos,
            value_pos=bev_pos,
            record=record, record_key=f"single.pt.{cat}",
        )
    el = cross_attention_block(
        params["queries.el"], bev_seq, params, "decode.single.el",
        query_pos=params["queries.el_pos"], key_pos=bev_pos,
        value_pos=bev_pos,
        record=record, record_key="single.el",
    )
    return pts, el, []


def decode_queries(bev_seq, params: dict, cfg: ModelConfig, coupled: bool, record=None):
    if coupled:
        return coupled_decode(bev_seq, params, cfg, record)
    return single_decode(bev_seq, params, cfg, record)
