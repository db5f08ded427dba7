"""Assignment layers against exhaustive-search oracles.

Both matchers must equal brute force at exact cost equality: the
Hungarian element assignment against every permutation, and the
order-preserving point DP against every increasing subsequence in both
traversal directions.
"""
from itertools import combinations, permutations

import numpy as np
import pytest

from vecmap.config import CATEGORIES, ModelConfig, SceneConfig
from vecmap.matching import (
    assignment_cost_matrix,
    dynamic_point_match,
    element_assignment,
    evaluate_correspondence,
    match_scene,
)
from vecmap.maptypes import MapElement, VectorMap
from vecmap.scenes import generate_map


def _random_probs(rng, m):
    z = rng.random((m, 4)) + 1e-3
    return z / z.sum(axis=1, keepdims=True)


def _random_gts(rng, g, cat="divider"):
    out = []
    for _ in range(g):
        base = rng.uniform(-10, 10, size=2)
        step = rng.uniform(0.5, 3.0, size=2)
        pts = base[None, :] + np.arange(3)[:, None] * step[None, :]
        out.append(MapElement(cat, pts))
    return out


# ------------------------------------------------- element assignment


@pytest.mark.parametrize("seed", range(60))
def test_element_assignment_equals_permutation_minimum(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 7))
    g = int(rng.integers(1, m + 1))
    probs = _random_probs(rng, m)
    pred_points = rng.uniform(-12, 12, size=(m, 4, 2))
    gts = _random_gts(rng, g)
    cost = assignment_cost_matrix(probs, pred_points, gts, 1)

    best = np.inf
    for perm in permutations(range(m), g):
        best = min(best, sum(cost[perm[j], j] for j in range(g)))

    pairs = element_assignment(probs, pred_points, gts, 1)
    got = sum(cost[slot, j] for slot, j in pairs)
    assert got == pytest.approx(best, abs=0.0, rel=0.0), "assignment not optimal"
    # structural sanity: a bijection onto the gts, sorted by gt index
    assert [j for _, j in pairs] == list(range(g))
    assert len({slot for slot, _ in pairs}) == g


def test_element_assignment_rejects_overflow():
    rng = np.random.default_rng(0)
    probs = _random_probs(rng, 2)
    pts = rng.random((2, 3, 2))
    gts = _random_gts(rng, 3)
    with pytest.raises(ValueError):
        element_assignment(probs, pts, gts, 0)


def test_element_assignment_empty_gt():
    rng = np.random.default_rng(1)
    assert element_assignment(_random_probs(rng, 3), rng.random((3, 3, 2)), [], 0) == []


# ------------------------------------------------- point-level matching


def _exhaustive_point_minimum(pred, gt):
    """Minimum correspondence cost over both directions and every
    increasing subsequence, costed by the shared objective."""
    n, k = pred.shape[0], gt.shape[0]
    best = np.inf
    for direction in (1, -1):
        g = gt if direction == 1 else gt[::-1]
        for idx in combinations(range(n), k):
            best = min(best, evaluate_correspondence(pred, g, np.array(idx)))
    return best


@pytest.mark.parametrize("seed", range(110))
def test_dynamic_point_match_equals_exhaustive(seed):
    rng = np.random.default_rng(seed + 500)
    n = int(rng.integers(1, 8))
    k = int(rng.integers(1, min(n, 4) + 1))
    pred = rng.uniform(-5, 5, size=(n, 2))
    gt = rng.uniform(-5, 5, size=(k, 2))
    pm = dynamic_point_match(pred, gt)
    brute = _exhaustive_point_minimum(pred, gt)
    # identical arithmetic path: the DP total must equal the enumerated
    # minimum exactly, and re-costing its own choice must reproduce it
    assert pm.cost == pytest.approx(brute, abs=1e-9)
    assert evaluate_correspondence(pred, pm.gt_oriented, pm.choice) == pytest.approx(
        pm.cost, abs=1e-9
    )
    assert np.all(np.diff(pm.choice) >= 1)


def test_dynamic_point_match_requires_enough_preds():
    with pytest.raises(ValueError):
        dynamic_point_match(np.zeros((2, 2)), np.arange(6.0).reshape(3, 2))


def test_dynamic_point_match_rejects_empty_gt():
    with pytest.raises(ValueError):
        dynamic_point_match(np.zeros((3, 2)), np.zeros((0, 2)))


def test_direction_tie_prefers_forward():
    # symmetric configuration: both directions cost the same
    pred = np.array([(0.0, 0.0), (0.0, 1.0), (0.0, 2.0)])
    gt = np.array([(0.0, 0.0), (0.0, 2.0)])
    pm = dynamic_point_match(pred, gt)
    assert pm.direction == 1
    np.testing.assert_array_equal(pm.gt_oriented, gt)


def test_reversed_gt_picks_reverse_direction():
    pred = np.array([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)])
    gt = np.array([(3.0, 0.0), (1.5, 0.0), (0.0, 0.0)])  # runs right-to-left
    pm = dynamic_point_match(pred, gt)
    assert pm.direction == -1
    assert pm.cost == pytest.approx(0.5 + 0.1 * 0.0)  # mid point 0.5 off, spares on-curve


def test_perfect_overlap_costs_zero():
    gt = np.array([(0.0, 0.0), (1.0, 1.0), (2.0, 0.5)])
    pm = dynamic_point_match(gt.copy(), gt)
    assert pm.cost == 0.0
    np.testing.assert_array_equal(pm.choice, [0, 1, 2])


def test_spare_points_pay_segment_distance():
    # 3 preds, 2 gts; the middle pred is skipped and pays 0.1 x its
    # distance to the bridging segment
    pred = np.array([(0.0, 0.0), (0.5, 2.0), (1.0, 0.0)])
    gt = np.array([(0.0, 0.0), (1.0, 0.0)])
    pm = dynamic_point_match(pred, gt)
    assert pm.cost == pytest.approx(0.1 * 2.0)
    np.testing.assert_array_equal(pm.choice, [0, 2])


# ------------------------------------------------------- scene matching


def _tiny_scene_inputs(rng, cfg):
    m_total = sum(cfg.caps.values())
    logits = rng.normal(size=(m_total, 4))
    pts = {
        cat: rng.uniform(-10, 10, size=(cfg.caps[cat], cfg.points[cat], 2))
        for cat in CATEGORIES
    }
    return logits, pts


def test_match_scene_covers_every_gt(tiny_config):
    cfg = tiny_config.model
    rng = np.random.default_rng(3)
    gt_map = generate_map(cfg, tiny_config.scene, rng)
    logits, pts = _tiny_scene_inputs(rng, cfg)
    res = match_scene(logits, pts, gt_map, cfg)
    for cat in CATEGORIES:
        gts = gt_map.by_category(cat)
        matches = res.per_category[cat]
        assert len(matches) == len(gts)
        assert sorted(m.gt_index for m in matches) == list(range(len(gts)))
        slots = [m.slot for m in matches]
        assert len(set(slots)) == len(slots)
        for m in matches:
            assert 0 <= m.slot < cfg.caps[cat]
            assert m.points.choice.shape[0] == gts[m.gt_index].points.shape[0]


def test_match_scene_deterministic(tiny_config):
    cfg = tiny_config.model
    rng = np.random.default_rng(9)
    gt_map = generate_map(cfg, tiny_config.scene, rng)
    logits, pts = _tiny_scene_inputs(rng, cfg)
    a = match_scene(logits, pts, gt_map, cfg)
    b = match_scene(logits, pts, gt_map, cfg)
    for cat in CATEGORIES:
        for ma, mb in zip(a.per_category[cat], b.per_category[cat]):
            assert (ma.slot, ma.gt_index, ma.points.direction) == (
                mb.slot,
                mb.gt_index,
                mb.points.direction,
            )
            np.testing.assert_array_equal(ma.points.choice, mb.points.choice)
