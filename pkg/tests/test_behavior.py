import dataclasses
import math

import numpy as np
import pytest

from mwmlab.arena import ArenaConfig, in_platform
from mwmlab.auxtasks import AuxSpec
from mwmlab.behavior import (STRATEGIES, Strategy, Thresholds, Trajectory, classify, classify_trajectory,
                             dwell_color, evaluate_checkpoint, extract_features, make_eval_poses,
                             record_trajectories, render_trajectory_image, strategy_fractions,
                             synthetic_suite, synthetic_trajectory, thresholds_from_dict, _walk, _finish)
from mwmlab.net import init_params
from mwmlab.trainer import make_net_config

CFG = ArenaConfig()


def fresh_params(seed=0):
    return init_params(np.random.default_rng(seed), make_net_config(CFG, AuxSpec(()), 16))


def test_recording_deterministic_and_untrained_mostly_timeout():
    p = fresh_params()
    poses = make_eval_poses(1, CFG, 20)
    a = record_trajectories(p, CFG, poses)
    b = record_trajectories(p, CFG, poses)
    assert all(np.array_equal(x.poses, y.poses) for x, y in zip(a, b))
    assert np.mean([t.length == 200 for t in a]) >= 0.8
    for t in a:
        assert t.length <= 200
        assert t.reached_goal == bool(in_platform(t.poses[-1, 0], t.poses[-1, 1], CFG))
        if not t.reached_goal:
            assert t.length == 200


def test_features_straight_and_static():
    t = _finish(_walk([np.array([100.0, 50.0, 0.0]), np.array([250.0, 50.0])]), CFG)
    f = extract_features(t)
    assert t.reached_goal and f.path_efficiency == pytest.approx(1.0)
    still = Trajectory(np.tile([[100.0, 100.0, 0.0]], (201, 1)), np.zeros(200, int), False)
    f = extract_features(still)
    assert f.path_efficiency == 0.0 and f.max_dwell == 200


def test_features_full_loop_sweep():
    ang = np.linspace(0, 2 * math.pi, 120)
    poses = np.column_stack([150 + 100 * np.cos(ang), 150 + 100 * np.sin(ang), ang])
    f = extract_features(Trajectory(poses, np.full(119, 2), False))
    assert f.angular_sweep == pytest.approx(2 * math.pi, rel=1e-6)


def test_rule_examples():
    direct = _finish(_walk([np.array([60.0, 200.0, 0.0]), np.array([250.0, 50.0])]), CFG)
    assert classify_trajectory(direct) is Strategy.Direct
    corner = _finish(_walk([np.array([150.0, 150.0, 0.0]), np.array([285.0, 285.0]), np.array([250.0, 50.0])]), CFG)
    assert classify_trajectory(corner) is Strategy.CornerTest
    ang = np.arange(201) * 0.1
    orbit = np.column_stack([150 + 100 * np.cos(ang), 150 + 100 * np.sin(ang), ang + math.pi / 2])
    assert classify_trajectory(Trajectory(orbit, np.full(200, 2), False)) is Strategy.Circling


def test_classifier_total_and_deterministic():
    rng = np.random.default_rng(0)
    for _ in range(200):
        f = extract_features(Trajectory(np.column_stack([rng.uniform(0, 300, (30, 2)), np.zeros(30)]),
                                        np.zeros(29, int), bool(rng.random() < 0.5)))
        assert classify(f) in STRATEGIES and classify(f) is classify(f)


def test_synthetic_suite_accuracy():
    suite = synthetic_suite(100, seed=0)
    acc = np.mean([classify_trajectory(t) is k for k, t in suite])
    assert acc >= 0.95


def test_thresholds_from_dict():
    th = thresholds_from_dict({"corner_radius": 80})
    assert th.corner_radius == 80.0 and isinstance(th, Thresholds)
    with pytest.raises(ValueError):
        thresholds_from_dict({"bogus": 1})


def test_render_size_and_single_pose():
    img = render_trajectory_image(Trajectory(np.array([[150.0, 150.0, 0.0]]), np.zeros(0, int), False))
    assert img.size == (224, 224)
    t = synthetic_trajectory(Strategy.Circling, np.random.default_rng(1))
    assert render_trajectory_image(t).size == (224, 224)


def test_render_jitter_invariance():
    rng = np.random.default_rng(2)
    for kind in STRATEGIES:
        t = synthetic_trajectory(kind, rng)
        j = Trajectory(t.poses + np.column_stack([rng.uniform(-0.49, 0.49, (len(t.poses), 2)),
                                                  np.zeros(len(t.poses))]), t.actions, t.reached_goal)
        a = np.asarray(render_trajectory_image(t))
        b = np.asarray(render_trajectory_image(j))
        assert np.mean(np.any(a != b, axis=2)) < 0.01


def test_dwell_ramp_monotone():
    cols = [dwell_color(k) for k in range(60)]
    assert cols[0] == (255, 255, 255) and cols[50] == (255, 0, 0)
    g = [c[1] for c in cols[:51]]
    assert all(x > y for x, y in zip(g, g[1:]))


def test_fractions_and_evaluate(tmp_path):
    fr = strategy_fractions([Strategy.Direct, Strategy.Circling, Strategy.Circling, Strategy.Stuck])
    assert sum(fr[s.value] for s in STRATEGIES) == pytest.approx(1.0)
    assert fr["spatial"] == 0.25 and fr["non_spatial"] == 0.75
    trajs, classes, frac = evaluate_checkpoint(fresh_params(), CFG, make_eval_poses(0, CFG, 10))
    assert len(trajs) == len(classes) == 10
    assert sum(frac[s.value] for s in STRATEGIES) == pytest.approx(1.0)


def test_full_revolution_is_circling_at_any_wall_distance():
    ang = np.deg2rad(np.arange(-90, 271, 30))
    pts = ([np.array([150.0, 150.0, -math.pi / 2])]
           + [np.array([150 + 100 * math.cos(a), 150 + 100 * math.sin(a)]) for a in ang] + [np.array([250.0, 50.0])])
    f = extract_features(_finish(_walk(pts), CFG))
    assert f.outer_sweep >= 2 * math.pi
    # the same revolution with a wall distance too uneven for the wall-following rule
    loose = dataclasses.replace(f, wall_dist_cv=0.55)
    assert classify(loose) is Strategy.Circling
    assert classify(dataclasses.replace(loose, outer_sweep=1.5 * math.pi)) is not Strategy.Circling


def test_crossing_the_center_is_not_a_revolution():
    # out to the far corner and straight back through the middle
    t = _finish(_walk([np.array([170.0, 130.0, 0.0]), np.array([40.0, 260.0]), np.array([250.0, 50.0])]), CFG)
    f = extract_features(t)
    assert f.outer_sweep < math.pi
    assert classify(f) is not Strategy.Circling
