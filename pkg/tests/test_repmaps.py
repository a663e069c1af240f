import math

import numpy as np
import pytest

from mwmlab.arena import ArenaConfig
from mwmlab.auxtasks import AuxSpec
from mwmlab.behavior import make_eval_poses
from mwmlab.net import init_params
from mwmlab.repmaps import (ActivationTrace, angle_grid, collect_traces, direction_map, direction_score,
                            edge_initial_conditions, linear_fit, node_scores, spatial_grid, spatial_heatmap,
                            spatial_score)
from mwmlab.trainer import make_net_config
from oracles import direction_score_naive, spatial_score_naive

CFG = ArenaConfig(variant="NorthPoster")


def test_grids():
    g = spatial_grid()
    assert g.shape == (900, 2) and g.min() == 5 and g.max() == 295
    a = angle_grid()
    assert len(a) == 100 and a[0] == -math.pi and a[-1] < math.pi


def test_edge_conditions():
    e = edge_initial_conditions(CFG)
    assert len(e) == 116
    to_center = np.arctan2(150 - e[:, 1], 150 - e[:, 0])
    assert np.allclose(e[:, 2], to_center)


def test_heatmap_single_step_closed_form():
    g = spatial_grid()
    m = 345
    a = spatial_heatmap(g[m:m + 1], np.array([1.0]))
    k = np.exp(-np.hypot(*(g - g[m]).T) / 20)
    assert np.allclose(a, k - k.mean(), atol=1e-12)
    assert abs(a.mean()) < 1e-6


def test_direction_map_mean_zero():
    rng = np.random.default_rng(0)
    d = direction_map(rng.uniform(-math.pi, math.pi, 500), rng.normal(size=500))
    assert d.shape == (100,) and abs(d.mean()) < 1e-6


def test_spatial_score_oracles():
    g = spatial_grid()
    a = np.zeros(900)
    a[10] = -3.0
    assert spatial_score(a, g) == 1.0
    a[800] = -3.0
    d = np.hypot(*(g[10] - g[800]))
    assert spatial_score(a, g) == pytest.approx(1 + math.exp(-d / 50), abs=1e-9)
    assert spatial_score(np.zeros(900), g) == 0.0


def test_scores_match_naive():
    rng = np.random.default_rng(1)
    pts = spatial_grid(n=8)
    ang = angle_grid(36)
    for _ in range(20):
        m = rng.normal(size=64)
        assert spatial_score(m, pts) == pytest.approx(spatial_score_naive(m, pts), abs=1e-9)
        d = rng.normal(size=36)
        assert direction_score(d, ang) == pytest.approx(direction_score_naive(d, ang), abs=1e-9)


def test_direction_score_tuned_vs_uniform():
    ang = angle_grid()
    # each half-lobe of a cosine tuning curve has resultant mean(cos^2) over its half circle = 1/2
    assert direction_score(np.cos(ang - 0.7)) == pytest.approx(0.5, abs=1e-3)
    flat = direction_map(np.random.default_rng(2).uniform(-math.pi, math.pi, 3000), np.full(3000, 1.0))
    assert direction_score(flat) < 0.05 * 1.0


def test_collect_traces_and_node_scores():
    p = init_params(np.random.default_rng(0), make_net_config(CFG, AuxSpec(()), 8))
    poses = make_eval_poses(0, CFG, 4)
    t1 = collect_traces(p, CFG, poses)
    t2 = collect_traces(p, CFG, poses)
    assert np.array_equal(t1.activations, t2.activations)
    assert len(np.unique(t1.episode)) == 4 + 116
    heat, dirs, s, d = node_scores(t1, CFG)
    assert heat.shape == (900, 8) and dirs.shape == (100, 8)
    assert np.all(np.isfinite(s)) and np.all(s >= 0) and np.all((d >= 0) & (d <= 1))


def test_linear_fit():
    x = np.arange(10.0)
    slope, icpt, r2 = linear_fit(x, 2 * x + 1)
    assert (slope, icpt, r2) == pytest.approx((2, 1, 1))
    y = np.array([1.0, 3.0, 2.0, 5.0, 4.0])
    s, i, r2 = linear_fit(np.arange(5.0), y)
    ref = np.corrcoef(np.arange(5.0), y)[0, 1] ** 2
    assert r2 == pytest.approx(ref)
    assert all(math.isnan(v) for v in linear_fit([1.0], [2.0]))
