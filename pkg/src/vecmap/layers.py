"""Parameter initializers and the small composite blocks built from ops.

Parameters live in one flat dict of dotted names -> Tensor so the
optimizer and checkpoints can treat them uniformly; the helpers here
create and consume entries under a caller-supplied prefix.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .grids import sine_position_encoding
from .tensor import Tensor

_POS_CACHE: dict = {}


def position_code(h: int, w: int, c: int, dtype) -> Tensor:
    """Cached [H*W, C] sine position code as a constant tensor."""
    key = (h, w, c, np.dtype(dtype).str)
    if key not in _POS_CACHE:
        _POS_CACHE[key] = sine_position_encoding(h, w, c, dtype)
    return Tensor(_POS_CACHE[key])


_CELL_CACHE: dict = {}


def cell_centers(h: int, w: int, dtype) -> tuple:
    """Cached constant tensors ([HW] row index, [HW] column index) in cell
    units, row-major to match a [C,H,W] -> [C,HW] reshape."""
    key = (h, w, np.dtype(dtype).str)
    if key not in _CELL_CACHE:
        rows = np.repeat(np.arange(h, dtype=np.float64), w)
        cols = np.tile(np.arange(w, dtype=np.float64), h)
        _CELL_CACHE[key] = (rows.astype(dtype), cols.astype(dtype))
    r, c = _CELL_CACHE[key]
    return Tensor(r), Tensor(c)


def linear_params(params: dict, prefix: str, rng, d_in: int, d_out: int, dtype, scale=None, zero=False):
    if zero:
        w = np.zeros((d_in, d_out), dtype=dtype)
    else:
        s = (1.0 / np.sqrt(d_in)) if scale is None else scale
        w = rng.normal(0.0, s, size=(d_in, d_out)).astype(dtype)
    params[prefix + ".w"] = Tensor(w, requires_grad=True)
    params[prefix + ".b"] = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)


def conv_params(params: dict, prefix: str, rng, c_out: int, c_in: int, dtype, zero=False):
    if zero:
        w = np.zeros((c_out, c_in, 3, 3), dtype=dtype)
    else:
        s = 1.0 / np.sqrt(c_in * 9)
        w = rng.normal(0.0, s, size=(c_out, c_in, 3, 3)).astype(dtype)
    params[prefix + ".w"] = Tensor(w, requires_grad=True)
    params[prefix + ".b"] = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)


def attn_params(params: dict, prefix: str, rng, c: int, dtype):
    for name in ("q", "k", "v", "o"):
        linear_params(params, f"{prefix}.{name}", rng, c, c, dtype)


def ffn_params(params: dict, prefix: str, rng, c: int, dtype, hidden: int | None = None):
    hidden = 2 * c if hidden is None else hidden
    linear_params(params, f"{prefix}.w1", rng, c, hidden, dtype)
    linear_params(params, f"{prefix}.w2", rng, hidden, c, dtype)


def mlp2_params(params: dict, prefix: str, rng, d_in: int, d_hidden: int, d_out: int, dtype):
    linear_params(params, f"{prefix}.w1", rng, d_in, d_hidden, dtype)
    linear_params(params, f"{prefix}.w2", rng, d_hidden, d_out, dtype)


def apply_linear(x, params: dict, prefix: str):
    return ops.linear(x, params[prefix + ".w"], params[prefix + ".b"])


def apply_mlp2(x, params: dict, prefix: str):
    return apply_linear(ops.relu(apply_linear(x, params, prefix + ".w1")), params, prefix + ".w2")


def cross_attention_block(x, keys, params: dict, prefix: str, bias=None, query_pos=None,
                          key_pos=None, value_pos=None, record=None, record_key: str = ""):
    """Residual attention read:
    x + Wo(attend(Wq(x + query_pos), Wk(keys + key_pos), Wv(keys + value_pos))).

    ``bias`` is added to the attention logits (broadcast).  With the output
    projection zeroed the block is an exact identity.

    value_pos matters when the reader must know WHERE it read, not just
    what: content features alone cannot tell a downstream head which cell
    they came from, so a positional term on the value path is the only
    route from attention location to a coordinate regression.
    """
    q_in = x if query_pos is None else ops.add(x, query_pos)
    k_in = keys if key_pos is None else ops.add(keys, key_pos)
    v_in = keys if value_pos is None else ops.add(keys, value_pos)
    q = apply_linear(q_in, params, prefix + ".q")
    k = apply_linear(k_in, params, prefix + ".k")
    v = apply_linear(v_in, params, prefix + ".v")
    att, weights = ops.scaled_dot_attention(q, k, v, bias=bias, return_weights=True)
    if record is not None:
        record[record_key or prefix] = weights.data
    return ops.add(x, apply_linear(att, params, prefix + ".o"))


def self_attention_block(x, params: dict, prefix: str, record=None, record_key: str = ""):
    return cross_attention_block(x, x, params, prefix, record=record, record_key=record_key)


def ffn_block(x, params: dict, prefix: str):
    return ops.add(x, apply_mlp2(x, params, prefix))
