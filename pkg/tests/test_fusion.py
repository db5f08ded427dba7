"""Cross-modal fusion: warp identities, flow behavior, attention rows.

The warp identities are exact claims, not approximations: zero flow must
return the input bit for bit, and constant integer flow must equal an
index shift with zero fill on every small grid and offset.
"""
import numpy as np
import pytest

from vecmap.config import ModelConfig, SceneConfig
from vecmap.fusion import (
    concat_fusion,
    coupled_fusion,
    fuse_grids,
    init_fusion_params,
    warp_features,
)
from vecmap.grids import BevGrid
from vecmap import kernels
from vecmap.scenes import (
    apply_disparity,
    generate_map,
    invert_flow,
    modality_projection,
    render_modality,
    smooth_flow_field,
    warp_array,
)
from vecmap.tensor import Tape, Tensor


def _grid(features, modality="camera"):
    cfg = ModelConfig()
    return BevGrid(
        modality=modality,
        features=features,
        cell_size=cfg.cell_size,
        origin=(cfg.y_min, cfg.x_min),
    )


def _params(rng, c=8, coupled=True, dtype=np.float64):
    params = {}
    init_fusion_params(params, rng, c, dtype, coupled)
    return params


# ------------------------------------------------------- warp identities


def test_zero_flow_is_bit_exact_identity():
    rng = np.random.default_rng(0)
    for shape in ((3, 5, 4), (1, 2, 2), (4, 7, 3)):
        x = rng.normal(size=shape)
        flow = np.zeros((2,) + shape[1:])
        out = warp_features(Tensor(x.copy()), Tensor(flow))
        assert np.array_equal(out.data, x)
        assert np.array_equal(warp_array(x, flow), x)


def test_integer_flow_shifts_with_zero_fill_exhaustively():
    rng = np.random.default_rng(1)
    for h, w in ((3, 3), (4, 5), (5, 2)):
        x = rng.normal(size=(2, h, w))
        for dh in range(-2, 3):
            for dw in range(-2, 3):
                flow = np.zeros((2, h, w))
                flow[0] = dh
                flow[1] = dw
                want = np.zeros_like(x)
                for hh in range(h):
                    for ww in range(w):
                        sh, sw = hh + dh, ww + dw
                        if 0 <= sh < h and 0 <= sw < w:
                            want[:, hh, ww] = x[:, sh, sw]
                got = warp_features(Tensor(x.copy()), Tensor(flow))
                assert np.array_equal(got.data, want), (h, w, dh, dw)


def test_flow_recovery_interpolation_bound_smooth_fields():
    """Distort-then-unwarp round trips are limited only by bilinear
    interpolation error plus the fixed-point inversion residual (the
    latter measures < 3e-5 in the interior).  On low-frequency fields
    the combined error is small: worst case 0.036 x dynamic range over
    these 50 seeds, frozen here as < 0.05.  The 3-cell boundary band is
    excluded because content advected past the edge zero-fills and no
    warp can bring it back (max displacement 2 cells + 1 tap support).
    """
    mcfg = ModelConfig()
    scfg = SceneConfig()
    h, w = mcfg.grid_h, mcfg.grid_w
    qh = np.repeat(np.linspace(0.0, 3.0, h)[:, None], w, 1)
    qw = np.repeat(np.linspace(0.0, 2.0, w)[None, :], h, 0)
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        field = kernels.bilinear_forward(rng.normal(size=(3, 4, 3)), qh, qw)
        flow = smooth_flow_field(mcfg, scfg, rng)
        inverse = invert_flow(flow)
        recovered = warp_array(warp_array(field, inverse), flow)
        err = np.abs(recovered - field)[:, 3:-3, 3:-3].max()
        span = field.max() - field.min()
        worst = max(worst, err / span)
        assert err < 0.05 * span, f"seed {seed}: {err:.4f} vs span {span:.4f}"
    assert worst < 0.05


def test_gt_flow_recovers_clean_rendering():
    """Same round trip on rendered scenes.  Rasterized lane features are
    sharply peaked (gaussian falloff with sigma 0.7 cells), so bilinear
    resampling carries a curvature-scale error along the ridge lines that
    no flow accuracy can remove; the smooth-field test above shows the
    interpolator itself is fine.  Measured over these 50 seeds at a
    3-cell interior crop: worst 0.234, p95 0.186, median 0.136 x dynamic
    range.  Frozen regression bounds: every seed < 0.30, median < 0.20.
    """
    mcfg = ModelConfig()
    mcfg.channels = 4
    scfg = SceneConfig()
    ratios = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        vmap = generate_map(mcfg, scfg, rng)
        proj = modality_projection(rng, mcfg.channels)
        clean = render_modality(vmap, mcfg, scfg, "camera", rng, proj)
        distorted, gt_flow = apply_disparity(clean, mcfg, scfg, rng)
        recovered = warp_array(distorted, gt_flow)
        err = np.abs(recovered - clean)[:, 3:-3, 3:-3].max()
        rng_span = clean.max() - clean.min()
        ratios.append(err / rng_span)
        assert err < 0.30 * rng_span, f"seed {seed}: {err:.4f} vs range {rng_span:.4f}"
    assert float(np.median(ratios)) < 0.20


def test_fresh_parameters_predict_exactly_zero_flow():
    rng = np.random.default_rng(2)
    params = _params(rng)
    x = rng.normal(size=(8, 8, 5))
    cam = Tensor(x)
    lidar = Tensor(rng.normal(size=(8, 8, 5)))
    fused, flow = coupled_fusion(cam, lidar, params)
    assert np.array_equal(flow.data, np.zeros_like(flow.data))


# --------------------------------------------------- attention behavior


def test_fusion_attention_rows_sum_to_one():
    rng = np.random.default_rng(3)
    params = _params(rng)
    record = {}
    cam = Tensor(rng.normal(size=(8, 5, 4)))
    lidar = Tensor(rng.normal(size=(8, 5, 4)))
    coupled_fusion(cam, lidar, params, record=record)
    keys = {k for k in record if "reads" in k}
    assert keys == {"fusion.cam_reads_lidar", "fusion.lidar_reads_cam"}
    for k in keys:
        sums = record[k].sum(axis=-1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-9)


def test_coupled_fusion_differentiable():
    rng = np.random.default_rng(4)
    params = _params(rng, c=4)
    cam = Tensor(rng.normal(size=(4, 4, 3)), requires_grad=True)
    lidar = Tensor(rng.normal(size=(4, 4, 3)), requires_grad=True)
    tape = Tape()
    with tape:
        fused, flow = coupled_fusion(cam, lidar, params)
        loss = (fused * fused).sum() if hasattr(fused, "sum") else None
        from vecmap import ops

        loss = ops.sum_all(ops.mul(fused, fused))
        tape.backward(loss)
    assert cam.grad is not None and np.isfinite(cam.grad).all()
    assert lidar.grad is not None and np.isfinite(lidar.grad).all()


# ------------------------------------------------------- ablation path


def test_concat_baseline_has_no_flow():
    rng = np.random.default_rng(5)
    params = _params(rng, coupled=False)
    cam = _grid(Tensor(rng.normal(size=(8, 5, 4))))
    lidar = _grid(Tensor(rng.normal(size=(8, 5, 4))), "lidar")
    fused, flow = fuse_grids(cam, lidar, params, coupled=False)
    assert flow is None
    assert fused.features.shape == (8, 5, 4)
    assert fused.modality == "fused"


def test_coupled_path_produces_flow_field():
    rng = np.random.default_rng(6)
    params = _params(rng)
    cam = _grid(Tensor(rng.normal(size=(8, 5, 4))))
    lidar = _grid(Tensor(rng.normal(size=(8, 5, 4))), "lidar")
    fused, flow = fuse_grids(cam, lidar, params, coupled=True)
    assert flow is not None
    assert flow.flow.shape == (2, 5, 4)
    assert fused.features.shape == (8, 5, 4)


def test_fuse_grids_rejects_shape_mismatch():
    rng = np.random.default_rng(7)
    params = _params(rng)
    cam = _grid(Tensor(rng.normal(size=(8, 5, 4))))
    lidar = _grid(Tensor(rng.normal(size=(8, 4, 4))), "lidar")
    with pytest.raises(ValueError):
        fuse_grids(cam, lidar, params, coupled=True)


def test_fusion_deterministic():
    rng = np.random.default_rng(8)
    params = _params(rng)
    cam = Tensor(rng.normal(size=(8, 5, 4)))
    lidar = Tensor(rng.normal(size=(8, 5, 4)))
    a, fa = coupled_fusion(cam, lidar, params)
    b, fb = coupled_fusion(cam, lidar, params)
    assert np.array_equal(a.data, b.data)
    assert np.array_equal(fa.data, fb.data)
