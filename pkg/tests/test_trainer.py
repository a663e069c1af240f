import csv
import math

import numpy as np
import pytest

from mwmlab.arena import ArenaConfig
from mwmlab.auxtasks import AuxSpec
from mwmlab.net import init_params
from mwmlab.trainer import (Adam, LossCoefs, RolloutState, TrainConfig, clip_grad_norm, collect_rollout,
                            compute_advantages, loss_and_grad, make_net_config, normalize_advantages,
                            train)
from oracles import gae_reference

NP = ArenaConfig(variant="NorthPoster")


def fresh(aux="", width=16, seed=0, dtype=np.float32):
    spec = AuxSpec.parse(aux)
    p = init_params(np.random.default_rng(seed), make_net_config(NP, spec, width), dtype=dtype)
    return spec, p


def rollout(aux="", T=16, n=8, seed=0, greedy=False, dtype=np.float32):
    spec, p = fresh(aux, dtype=dtype)
    st = RolloutState(NP, n, 16, np.random.SeedSequence(seed), dtype=dtype)
    return p, spec, collect_rollout(p, st, T, spec, greedy=greedy)


def test_config_validation():
    assert TrainConfig(batch_size=1600, n_envs=100).horizon == 16
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1650)
    with pytest.raises(ValueError):
        TrainConfig(checkpoint_steps=(0, 200, 100))
    with pytest.raises(ValueError):
        TrainConfig(total_steps=1000, checkpoint_steps=(0, 2000))


def test_rollout_shapes_and_reward_separation():
    p, spec, b = rollout("GD FW RE TP", T=40)
    assert b.shape == (40, 8) and b.obs.shape == (40, 8, NP.obs_dim)
    assert set(b.targets) == {"GD", "FW", "TP"}
    assert np.array_equal(b.rewards - b.rewards_bonus, b.rewards_base)
    assert set(np.unique(b.rewards_base)) <= {0.0, 1.0}
    assert np.all((b.rewards_bonus == 0) | np.isclose(b.rewards_bonus, 0.01))


def test_no_aux_rollout():
    _, _, b = rollout("")
    assert b.targets == {} and np.all(b.rewards_bonus == 0)
    assert np.array_equal(b.rewards, b.rewards_base)


def test_greedy_rollout_reproducible():
    b1 = rollout(greedy=True, seed=4)[2]
    b2 = rollout(greedy=True, seed=4)[2]
    assert np.array_equal(b1.obs, b2.obs) and np.array_equal(b1.actions, b2.actions)


def test_hidden_reset_after_done():
    _, _, b = rollout(T=60, n=4)
    # the hidden state is zeroed on the step after every episode end
    assert np.array_equal(b.starts[1:], b.dones[:-1])


def test_gae_matches_reference():
    rng = np.random.default_rng(0)
    p, spec, b = rollout(T=30, n=5)
    b.rewards_base = rng.random((30, 5))
    b.values = rng.normal(size=(30, 5)).astype(np.float32)
    b.dones = rng.random((30, 5)) < 0.15
    b.truncs = b.dones & (rng.random((30, 5)) < 0.5)
    b.boot_values = np.where(b.truncs, rng.normal(size=(30, 5)), 0.0)
    adv, ret = compute_advantages(b, 0.97, 0.9, normalize=False)
    ref = gae_reference(b.rewards, b.values.astype(float), b.dones, b.last_value.astype(float), 0.97, 0.9,
                        boot=b.boot_values)
    assert np.allclose(adv, ref, atol=1e-12)
    assert np.allclose(ret, adv + b.values, atol=1e-12)


def test_gae_telescoping_and_zero():
    _, _, b = rollout(T=10, n=2)
    b.rewards_base = np.arange(20, dtype=float).reshape(10, 2)
    b.rewards_bonus = np.zeros((10, 2))
    b.values = np.zeros((10, 2), np.float32)
    b.last_value = np.zeros(2, np.float32)
    b.dones = np.zeros((10, 2), bool)
    b.truncs = np.zeros((10, 2), bool)
    adv, _ = compute_advantages(b, 1 - 1e-12, 1.0, normalize=False)  # gamma must stay below 1
    assert np.allclose(adv[:, 0], np.cumsum(b.rewards_base[::-1, 0])[::-1], rtol=1e-8)
    b.rewards_base[:] = 0
    adv, _ = compute_advantages(b, 0.99, 0.95)
    assert np.all(adv == 0)


def test_gae_hand_computed():
    _, _, b = rollout(T=3, n=1)
    b.rewards_base = np.array([[0.0], [0.0], [1.0]]); b.rewards_bonus = np.zeros((3, 1))
    b.values = np.array([[0.5], [0.6], [0.7]], np.float32)
    b.last_value = np.array([0.2], np.float32)
    b.dones = np.array([[False], [False], [True]]); b.truncs = np.zeros((3, 1), bool)
    g, lam = 0.9, 0.8
    v = b.values[:, 0].astype(float)
    d2 = 1.0 - v[2]
    d1 = g * v[2] - v[1]
    d0 = g * v[1] - v[0]
    expect = [d0 + g * lam * (d1 + g * lam * d2), d1 + g * lam * d2, d2]
    adv, _ = compute_advantages(b, g, lam, normalize=False)
    assert np.allclose(adv[:, 0], expect)


def test_normalization():
    a = np.random.default_rng(1).normal(3, 7, (16, 100))
    n = normalize_advantages(a)
    assert abs(n.mean()) < 1e-6 and abs(n.std() - 1) < 1e-4
    c = np.full((4, 4), 2.5)
    assert np.array_equal(normalize_advantages(c), c)


def test_initial_entropy_near_uniform():
    p, spec, b = rollout(T=16, n=20)
    adv, ret = compute_advantages(b, 0.99, 0.95)
    st, _ = loss_and_grad(p, b, np.arange(20), adv, ret, 0.2, LossCoefs())
    assert abs(st["entropy"] - math.log(4)) < 0.05


def test_ratio_one_clip_inactive():
    p, spec, b = rollout(T=16, n=8, dtype=np.float64)
    rng = np.random.default_rng(2)
    adv = rng.normal(size=b.shape)
    ret = np.zeros(b.shape)
    only_pi = LossCoefs(1.0, 0.0, 0.0, 0.0)
    st, g_clip = loss_and_grad(p, b, np.arange(8), adv, ret, 0.2, only_pi)
    _, g_wide = loss_and_grad(p, b, np.arange(8), adv, ret, 1e9, only_pi)
    assert st["clip_frac"] == 0
    assert np.allclose(g_clip.flat, g_wide.flat, atol=1e-12)


def test_zero_advantage_no_policy_gradient():
    p, spec, b = rollout(T=16, n=8, dtype=np.float64)
    z = np.zeros(b.shape)
    _, g = loss_and_grad(p, b, np.arange(8), z, z, 0.2, LossCoefs(1.0, 0.0, 0.0, 0.0))
    assert np.all(g.flat == 0)


def test_grad_clip_and_adam():
    g = np.array([3.0, 4.0])
    assert clip_grad_norm(g, 0.5) == pytest.approx(5.0)
    assert np.linalg.norm(g) == pytest.approx(0.5, rel=1e-5)
    w = np.array([1.0, -1.0])
    opt = Adam(2, 0.1, dtype=np.float64)
    opt.step(w, np.array([2.0, -0.001]))
    # first bias-corrected Adam step moves each coordinate by about lr against its gradient sign
    assert np.allclose(w, [0.9, -0.9], atol=1e-2)


def test_train_reproducible_and_log(tmp_path):
    cfg = TrainConfig(total_steps=1600, batch_size=800, checkpoint_steps=(0, 800, 1600))
    spec = AuxSpec.parse("GD TP")
    a = train(cfg, NP, spec, 3, tmp_path / "a")
    b = train(cfg, NP, spec, 3, tmp_path / "b")
    for step in (0, 800, 1600):
        assert open(a["checkpoints"][step], "rb").read() == open(b["checkpoints"][step], "rb").read()
    assert open(a["final"], "rb").read() == open(b["final"], "rb").read()
    c = train(cfg, NP, spec, 4, tmp_path / "c")
    assert open(a["final"], "rb").read() != open(c["final"], "rb").read()
    with open(a["log"]) as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["total_steps", "mean_episode_len", "policy_loss", "value_loss", "entropy",
                             "aux_GD", "aux_TP", "goal_rewards_in_batch"]
    assert [int(r["total_steps"]) for r in rows] == [800, 1600]
