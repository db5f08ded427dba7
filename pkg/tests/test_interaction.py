"""Query decoding: shapes, attention normalization, priors, exchange
structure, and per-element independence of the point-level stages.
"""
import numpy as np
import pytest

from vecmap.config import CATEGORIES, ModelConfig, slot_ranges
from vecmap.grids import cells_to_meters
from vecmap.heads import init_head_params
from vecmap.interaction import (
    PRIOR_SIGMA,
    _anchor_prior,
    _exchange,
    _point_level,
    _refined_prior,
    bev_position_code,
    coupled_decode,
    decode_queries,
    init_interaction_params,
    init_query_bank,
    single_decode,
)
from vecmap import ops
from vecmap.tensor import Tape, Tensor


def _cfg(layers=1):
    cfg = ModelConfig()
    cfg.channels = 8
    cfg.decoder_layers = layers
    cfg.grid_h = 10
    cfg.grid_w = 6
    cfg.caps = {"ped_crossing": 2, "divider": 2, "boundary": 2}
    cfg.points = {"ped_crossing": 3, "divider": 2, "boundary": 4}
    return cfg


def _params(rng, cfg, coupled=True):
    params = {}
    init_query_bank(params, rng, cfg, np.float64)
    init_interaction_params(params, rng, cfg, np.float64, coupled)
    init_head_params(params, rng, cfg, np.float64)  # refinement decodes keypoints
    return params


def _bev(rng, cfg):
    hw = cfg.grid_h * cfg.grid_w
    return Tensor(rng.normal(size=(hw, cfg.channels)))


# ------------------------------------------------------------- shapes


def test_coupled_decode_shapes_single_layer():
    cfg = _cfg(layers=1)
    rng = np.random.default_rng(0)
    params = _params(rng, cfg)
    pts, el, aux = coupled_decode(_bev(rng, cfg), params, cfg)
    for cat in CATEGORIES:
        assert pts[cat].shape == (cfg.caps[cat], cfg.points[cat], cfg.channels)
    assert el.shape == (cfg.total_elements, cfg.channels)
    assert aux == []


def test_coupled_decode_aux_per_intermediate_layer():
    cfg = _cfg(layers=3)
    rng = np.random.default_rng(1)
    params = _params(rng, cfg)
    pts, el, aux = coupled_decode(_bev(rng, cfg), params, cfg)
    assert len(aux) == 2
    for est in aux:
        for cat in CATEGORIES:
            assert est[cat].shape == (cfg.caps[cat], cfg.points[cat], 2)
            assert np.all(np.isfinite(est[cat].data))


def test_single_decode_shapes_and_empty_aux():
    cfg = _cfg()
    rng = np.random.default_rng(2)
    params = _params(rng, cfg, coupled=False)
    pts, el, aux = single_decode(_bev(rng, cfg), params, cfg)
    for cat in CATEGORIES:
        assert pts[cat].shape == (cfg.caps[cat], cfg.points[cat], cfg.channels)
    assert el.shape == (cfg.total_elements, cfg.channels)
    assert aux == []


def test_decode_queries_dispatch():
    cfg = _cfg()
    rng = np.random.default_rng(3)
    bev = _bev(rng, cfg)
    coupled = decode_queries(bev, _params(np.random.default_rng(4), cfg), cfg, True)
    single = decode_queries(bev, _params(np.random.default_rng(4), cfg, coupled=False), cfg, False)
    assert coupled[1].shape == single[1].shape


# ----------------------------------------------- attention normalization


def _expected_record_keys(layers):
    keys = set()
    for l in range(layers):
        for cat in CATEGORIES:
            keys |= {
                f"l{l}.pt.mask.{cat}",
                f"l{l}.pt.cross.{cat}",
                f"l{l}.pt.self.{cat}",
                f"l{l}.ex.pt.{cat}",
                f"l{l}.ex.el.{cat}",
            }
        keys |= {f"l{l}.el.mask", f"l{l}.el.cross", f"l{l}.el.self"}
    return keys


def test_recorded_attention_rows_sum_to_one():
    cfg = _cfg(layers=2)
    rng = np.random.default_rng(5)
    params = _params(rng, cfg)
    record = {}
    coupled_decode(_bev(rng, cfg), params, cfg, record=record)
    assert set(record) == _expected_record_keys(2)
    checked = 0
    for key, w in record.items():
        if ".mask" in key:
            continue  # raw logit biases, not distributions
        sums = w.sum(axis=-1)
        np.testing.assert_allclose(sums, np.ones_like(sums), rtol=0.0, atol=1e-9)
        checked += 1
    assert checked == 2 * (4 * len(CATEGORIES) + 2)


def test_single_decode_attention_rows_sum_to_one():
    cfg = _cfg()
    rng = np.random.default_rng(6)
    params = _params(rng, cfg, coupled=False)
    record = {}
    single_decode(_bev(rng, cfg), params, cfg, record=record)
    assert set(record) == {f"single.pt.{cat}" for cat in CATEGORIES} | {"single.el"}
    for w in record.values():
        sums = w.sum(axis=-1)
        np.testing.assert_allclose(sums, np.ones_like(sums), rtol=0.0, atol=1e-9)


def test_exchange_point_side_is_one_key_identity():
    """Each point attends to exactly one key (its element), so those
    attention weights are identically 1 and the element descriptor is
    passed through whole."""
    cfg = _cfg()
    rng = np.random.default_rng(7)
    params = _params(rng, cfg)
    record = {}
    coupled_decode(_bev(rng, cfg), params, cfg, record=record)
    for cat in CATEGORIES:
        w = record[f"l0.ex.pt.{cat}"]
        assert w.shape == (cfg.caps[cat], cfg.points[cat], 1)
        assert np.array_equal(w, np.ones_like(w))


def test_content_mask_shapes():
    cfg = _cfg()
    rng = np.random.default_rng(8)
    params = _params(rng, cfg)
    record = {}
    coupled_decode(_bev(rng, cfg), params, cfg, record=record)
    hw = cfg.grid_h * cfg.grid_w
    for cat in CATEGORIES:
        mask = record[f"l0.pt.mask.{cat}"]
        assert mask.shape == (cfg.caps[cat], hw)
        assert np.all(np.isfinite(mask))
    assert record["l0.el.mask"].shape == (1, hw)


# --------------------------------------------------------------- priors


def test_anchor_prior_peaks_at_reference_cell():
    cfg = _cfg()
    ref = np.zeros((2, 3, 2))
    ref[0, 0] = (2.0, 3.0)
    ref[0, 1] = (7.0, 1.0)
    ref[0, 2] = (0.0, 0.0)
    ref[1, 0] = (9.0, 5.0)
    ref[1, 1] = (4.0, 4.0)
    ref[1, 2] = (5.0, 2.0)
    prior = _anchor_prior(Tensor(ref), cfg, np.float64)
    assert prior.shape == (2, 3, cfg.grid_h * cfg.grid_w)
    for m in range(2):
        for n in range(3):
            row = prior.data[m, n]
            flat = int(ref[m, n, 0]) * cfg.grid_w + int(ref[m, n, 1])
            assert np.argmax(row) == flat
            assert row[flat] == 0.0  # zero distance, zero logit
            assert np.all(row <= 0.0)


def test_anchor_prior_gaussian_falloff():
    cfg = _cfg()
    ref = np.array([[[3.0, 2.0]]])
    prior = _anchor_prior(Tensor(ref), cfg, np.float64).data[0, 0]
    # one cell to the right: logit -1/(2 sigma^2)
    expected = -1.0 / (2.0 * PRIOR_SIGMA * PRIOR_SIGMA)
    assert prior[3 * cfg.grid_w + 3] == pytest.approx(expected, abs=1e-12)
    # two cells: quadruple the exponent
    assert prior[3 * cfg.grid_w + 4] == pytest.approx(4 * expected, abs=1e-12)


def test_refined_prior_centers_on_decoded_point():
    cfg = _cfg()
    cells = np.array([[[4.0, 2.0], [8.0, 5.0]]])  # [1,2,2] target cells
    points_m = cells_to_meters(cells, cfg)
    prior = _refined_prior(points_m, cfg, np.float64)
    assert prior.shape == (1, 2, cfg.grid_h * cfg.grid_w)
    for n, (r, c) in enumerate([(4, 2), (8, 5)]):
        row = prior.data[0, n]
        flat = r * cfg.grid_w + c
        assert np.argmax(row) == flat
        assert row[flat] == pytest.approx(0.0, abs=1e-9)


def test_refined_prior_is_detached_constant():
    cfg = _cfg()
    points_m = cells_to_meters(np.array([[[1.0, 1.0]]]), cfg)
    prior = _refined_prior(points_m, cfg, np.float64)
    assert not prior.requires_grad


def test_anchor_prior_moves_gradient_to_reference():
    cfg = _cfg()
    rng = np.random.default_rng(9)
    params = _params(rng, cfg)
    with Tape() as tape:
        pts, el, _ = coupled_decode(_bev(rng, cfg), params, cfg)
        total = ops.sum_all(el)
        for cat in CATEGORIES:
            total = ops.add(total, ops.sum_all(pts[cat]))
        tape.backward(total)
    for cat in CATEGORIES:
        g = params[f"queries.ref.{cat}"].grad
        assert g is not None and np.any(g != 0.0)
        assert params[f"queries.pt.{cat}"].grad is not None
    assert np.any(params["queries.el"].grad != 0.0)


# ----------------------------------- per-element independence (stage 1, 3)


def test_point_level_is_element_permutation_equivariant():
    """Stage 1 treats element rows of one category independently, so
    permuting descriptor rows (with their priors) permutes the output."""
    cfg = _cfg()
    rng = np.random.default_rng(10)
    params = _params(rng, cfg)
    bev = _bev(rng, cfg)
    bev_t = ops.transpose_last2(bev)
    bev_pos = bev_position_code(cfg, bev.dtype)
    pts = {cat: Tensor(rng.normal(size=(cfg.caps[cat], cfg.points[cat], cfg.channels)))
           for cat in CATEGORIES}
    priors = {cat: Tensor(rng.normal(size=(cfg.caps[cat], cfg.points[cat],
                                           cfg.grid_h * cfg.grid_w)))
              for cat in CATEGORIES}
    out = _point_level(pts, bev, bev_t, bev_pos, priors, params, 0, cfg, None)

    perm = [1, 0]
    pts_p = dict(pts)
    priors_p = dict(priors)
    pts_p["divider"] = Tensor(pts["divider"].data[perm])
    priors_p["divider"] = Tensor(priors["divider"].data[perm])
    out_p = _point_level(pts_p, bev, bev_t, bev_pos, priors_p, params, 0, cfg, None)

    np.testing.assert_allclose(out_p["divider"].data, out["divider"].data[perm],
                               rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(out_p["boundary"].data, out["boundary"].data,
                               rtol=0.0, atol=0.0)


def test_exchange_is_element_permutation_equivariant():
    cfg = _cfg()
    rng = np.random.default_rng(11)
    params = _params(rng, cfg)
    pts = {cat: Tensor(rng.normal(size=(cfg.caps[cat], cfg.points[cat], cfg.channels)))
           for cat in CATEGORIES}
    el = Tensor(rng.normal(size=(cfg.total_elements, cfg.channels)))
    new_pts, new_el = _exchange(pts, el, params, 0, cfg, None)

    perm = [1, 0]
    lo, hi = slot_ranges(cfg)["divider"]
    el_p = el.data.copy()
    el_p[lo:hi] = el.data[lo:hi][perm]
    pts_p = dict(pts)
    pts_p["divider"] = Tensor(pts["divider"].data[perm])
    new_pts_p, new_el_p = _exchange(pts_p, Tensor(el_p), params, 0, cfg, None)

    np.testing.assert_allclose(new_pts_p["divider"].data, new_pts["divider"].data[perm],
                               rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(new_el_p.data[lo:hi], new_el.data[lo:hi][perm],
                               rtol=0.0, atol=1e-12)
    # untouched categories come out identical
    np.testing.assert_allclose(new_el_p.data[:lo], new_el.data[:lo], rtol=0.0, atol=0.0)


# -------------------------------------------------------------- plumbing


def test_decode_is_deterministic():
    cfg = _cfg(layers=2)
    rng = np.random.default_rng(12)
    params = _params(rng, cfg)
    bev = _bev(rng, cfg)
    a = coupled_decode(bev, params, cfg)
    b = coupled_decode(bev, params, cfg)
    for cat in CATEGORIES:
        assert np.array_equal(a[0][cat].data, b[0][cat].data)
    assert np.array_equal(a[1].data, b[1].data)


def test_refined_prior_changes_second_layer_read():
    """Layer 1 reads around layer 0's keypoint estimate, so its cross
    attention differs from a rerun that can only use the anchors."""
    cfg = _cfg(layers=2)
    rng = np.random.default_rng(13)
    params = _params(rng, cfg)
    record = {}
    coupled_decode(_bev(rng, cfg), params, cfg, record=record)
    for cat in CATEGORIES:
        w0 = record[f"l0.pt.cross.{cat}"]
        w1 = record[f"l1.pt.cross.{cat}"]
        assert w0.shape == w1.shape
        assert not np.allclose(w0, w1)
