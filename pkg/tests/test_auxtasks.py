import math

import numpy as np
import pytest

from mwmlab.arena import Action, ArenaConfig, VecArena
from mwmlab.auxtasks import (AuxSpec, aux_loss_categorical, aux_loss_numeric, bonus_rewards,
                             compute_targets, one_hot, reward_RD, reward_RE, target_AD, target_FW,
                             target_GD, target_LR, target_QP, target_TP, terminal_targets)

CFG = ArenaConfig()


def test_parse_and_expansion():
    s = AuxSpec.parse("AD-NE LR-NE")
    assert s.tasks == ("AD-N", "AD-E", "LR-N", "LR-E")
    assert [h.dim for h in s.heads] == [1, 1, 2, 2]
    fq = AuxSpec.parse(["FW+QP", "RE"])
    assert fq.tasks == ("FW", "QP", "RE")
    assert [h.dim for h in fq.heads] == [4, 4] and fq.reward_tasks == ("RE",)
    assert AuxSpec.parse("").label() == "control"
    with pytest.raises(ValueError):
        AuxSpec.parse("XY")


def test_gd():
    assert target_GD(250, 50, CFG) == 0
    assert target_GD(0, 300, CFG) == pytest.approx(1.0)
    assert target_GD(150, 150, CFG) == pytest.approx(0.4)


def test_ad():
    assert target_AD(0.0, "E") == 0
    assert target_AD(math.pi, "E") == pytest.approx(1.0)
    assert target_AD(math.pi / 4, "N") == pytest.approx(0.25)


def test_tp():
    assert target_TP(50, 10) == pytest.approx(0.2)
    assert target_TP(200, 0) == 1.0
    assert target_TP(37, 37) == 0.0


def test_terminal_targets_masking():
    # env 0: episode of length 3 ending at t=2, then an unfinished one
    # env 1: nothing finishes
    dones = np.array([[0, 0], [0, 0], [1, 0], [0, 0], [0, 0]], bool)
    ep_step = np.array([[0, 5], [1, 6], [2, 7], [0, 8], [1, 9]])
    tgt, mask = terminal_targets(dones, ep_step, 200)
    assert mask[:, 0].tolist() == [True, True, True, False, False]
    assert not mask[:, 1].any()
    assert np.allclose(tgt[:3, 0], [3 / 200, 2 / 200, 1 / 200])


def test_terminal_targets_matches_loop():
    rng = np.random.default_rng(0)
    dones = rng.random((40, 6)) < 0.1
    ep_step = np.zeros((40, 6), int)
    for t in range(1, 40):
        ep_step[t] = np.where(dones[t - 1], 0, ep_step[t - 1] + 1)
    tgt, mask = terminal_targets(dones, ep_step, 200)
    for b in range(6):
        ends = np.flatnonzero(dones[:, b])
        for t in range(40):
            later = ends[ends >= t]
            if len(later):
                L = ep_step[later[0], b] + 1
                assert mask[t, b] and tgt[t, b] == pytest.approx((L - ep_step[t, b]) / 200)
            else:
                assert not mask[t, b]


def test_lr():
    assert target_LR(0.0, "N") == 0          # east facing, north is a left turn
    assert target_LR(math.pi / 2, "E") == 1  # north facing, east is a right turn
    assert target_LR(math.pi, "E") == 0      # antipodal tie goes Left
    assert target_LR(0.0, "E") == 0          # aligned tie goes Left


def test_fw():
    assert target_FW(0.0) == 0
    assert target_FW(math.pi / 2) == 1
    assert target_FW(math.pi / 4) == 1
    assert target_FW(-math.pi / 4) == 0
    assert target_FW(math.pi) == 2 and target_FW(-3 * math.pi / 4) == 3
    assert target_FW(-3 * math.pi / 4 - 1e-9) == 2


def test_qp():
    assert target_QP(75, 225, CFG) == 1
    assert target_QP(250, 50, CFG) == 3
    assert target_QP(150, 150, CFG) == 0


def test_label_periodicity_and_ranges():
    rng = np.random.default_rng(1)
    h = rng.uniform(-math.pi, math.pi, 1000)
    for d in "NE":
        assert np.array_equal(target_LR(h, d), target_LR(h + 2 * math.pi, d))
        a = target_AD(h, d)
        assert a.min() >= 0 and a.max() <= 1
    assert np.array_equal(target_FW(h), target_FW(h - 2 * math.pi))
    xy = rng.uniform(0, 300, (1000, 2))
    g = target_GD(xy[:, 0], xy[:, 1], CFG)
    assert g.min() >= 0 and g.max() <= 1
    oh = one_hot(target_QP(xy[:, 0], xy[:, 1], CFG), 4)
    assert np.all(oh.sum(1) == 1)


def test_compute_targets_excludes_tp():
    spec = AuxSpec.parse("GD TP FW")
    out = compute_targets(spec, np.array([150.0]), np.array([150.0]), np.array([0.0]), CFG)
    assert set(out) == {"GD", "FW"}


def test_numeric_loss():
    assert aux_loss_numeric([0.3, 0.4], [0.3, 0.4]) == 0
    assert aux_loss_numeric([1, 0], [0, 1]) == 1
    rng = np.random.default_rng(2)
    p, y = rng.random(50), rng.random(50)
    assert aux_loss_numeric(p, y) == pytest.approx(sum((a - b) ** 2 for a, b in zip(p, y)) / 50, abs=1e-12)
    assert aux_loss_numeric(p, y, np.zeros(50, bool)) == 0.0
    with pytest.raises(ValueError):
        aux_loss_numeric([1, 2], [1])


def test_categorical_loss():
    y = one_hot([0, 2, 3], 4)
    assert aux_loss_categorical(y, y) == 0
    assert aux_loss_categorical(np.full((3, 4), 0.25), y) == pytest.approx(math.log(4))
    rng = np.random.default_rng(3)
    p = rng.random((20, 4))
    p /= p.sum(1, keepdims=True)
    lab = rng.integers(0, 4, 20)
    ref = sum(-math.log(p[i, lab[i]]) for i in range(20)) / 20
    assert aux_loss_categorical(p, one_hot(lab, 4)) == pytest.approx(ref, abs=1e-12)
    zero = np.zeros((1, 4))
    zero[0, 1] = 1.0
    assert aux_loss_categorical(zero, one_hot([0], 4)) == pytest.approx(-math.log(1e-10))


def test_rd():
    assert reward_RD(250, 50, CFG) == pytest.approx(0.0015)
    assert reward_RD(0, 300, CFG) == pytest.approx(0.0, abs=1e-15)
    d = np.linspace(0, 1, 50)
    xs = 250 - d * 250
    ys = 50 + d * 250
    assert np.all(np.diff(reward_RD(xs, ys, CFG)) <= 0)


def test_rd_circling_episode_total():
    # 200 steps on a radius-100 orbit around the arena center
    ang = np.arange(200) * 0.1
    x, y = 150 + 100 * np.cos(ang), 150 + 100 * np.sin(ang)
    total = reward_RD(x, y, CFG).sum()
    assert 0.1 <= total <= 0.18


def test_re_chunks_per_episode():
    env = VecArena(CFG, 1, autoreset=False)
    env.reset_unchecked(np.array([[5.0, 5.0, 0.0]]))
    total = 0.0
    # serpentine sweep through every chunk
    for row in range(5):
        heading = 0.0 if row % 2 == 0 else math.pi
        env.heading[:] = heading
        for _ in range(30):
            _, _, done, info = env.step([Action.Forward])
            total += float(reward_RE(info["new_chunk"])[0])
        if row < 4:
            env.heading[:] = math.pi / 2
            for _ in range(6):
                _, _, done, info = env.step([Action.Forward])
                total += float(reward_RE(info["new_chunk"])[0])
    assert env.visited.sum() == 25
    assert total == pytest.approx(0.24)
    assert reward_RE(np.array([True, False])).tolist() == [0.01, 0.0]


def test_bonus_combination():
    spec = AuxSpec.parse("RD RE")
    b = bonus_rewards(spec, np.array([250.0]), np.array([50.0]), np.array([True]), CFG)
    assert b[0] == pytest.approx(0.0115)
    assert bonus_rewards(AuxSpec.parse("GD"), np.array([1.0]), np.array([1.0]), np.array([True]), CFG)[0] == 0
