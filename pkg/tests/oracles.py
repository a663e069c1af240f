"""Independent reference implementations used by the tests."""
from __future__ import annotations

import math

import numpy as np


def march_ray(x, y, angle, side=300.0, res=0.1):
    """Distance to the arena boundary found by stepping along the ray at ``res`` resolution."""
    dx, dy = math.cos(angle), math.sin(angle)
    # coarse march, then refine with the fine resolution
    t = 0.0
    step = 10.0
    while step >= res:
        while 0 <= x + (t + step) * dx <= side and 0 <= y + (t + step) * dy <= side:
            t += step
        step /= 10
    return t


def segment_hit(x, y, angle, a, b):
    """Ray-segment intersection distance (or inf) via the 2x2 linear solve."""
    d = np.array([math.cos(angle), math.sin(angle)])
    e = np.asarray(b, float) - np.asarray(a, float)
    m = np.array([[d[0], -e[0]], [d[1], -e[1]]])
    if abs(np.linalg.det(m)) < 1e-12:
        return math.inf
    t, s = np.linalg.solve(m, np.asarray(a, float) - [x, y])
    return t if t >= 0 and -1e-9 <= s <= 1 + 1e-9 else math.inf


def gae_reference(rewards, values, dones, last_value, gamma, lam, boot=None):
    """Plain double loop GAE over a (T, B) rollout."""
    T, B = rewards.shape
    adv = np.zeros((T, B))
    for b in range(B):
        acc = 0.0
        for t in reversed(range(T)):
            nxt = last_value[b] if t == T - 1 else values[t + 1, b]
            if dones[t, b]:
                nxt = 0.0 if boot is None else boot[t, b]
            delta = rewards[t, b] + gamma * nxt - values[t, b]
            acc = delta + (0.0 if dones[t, b] else gamma * lam * acc)
            adv[t, b] = acc
    return adv


def spatial_score_naive(a, pts, sigma=50.0):
    a = list(map(float, a))
    num = 0.0
    for sign in (1, -1):
        for i in range(len(a)):
            for j in range(len(a)):
                if sign * a[i] > 0 and sign * a[j] > 0:
                    d = math.hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1])
                    num += a[i] * a[j] * math.exp(-d / sigma)
    den = sum(v * v for v in a)
    return num / den if den else 0.0


def direction_score_naive(a, angles):
    out = []
    for sign in (1, -1):
        sel = [(abs(v), th) for v, th in zip(a, angles) if sign * v > 0]
        if not sel:
            out.append(0.0)
            continue
        cx = sum(v * math.cos(th) for v, th in sel) / len(sel)
        cy = sum(v * math.sin(th) for v, th in sel) / len(sel)
        out.append(math.hypot(cx, cy))
    return sum(out) / 2


def fd_full_loss_check(seed: int, width: int = 4, T: int = 16, n_envs: int = 4, eps: float = 1e-4):
    """Max relative error between analytic and central-difference gradients of the full loss.

    Covers policy, value, entropy and every auxiliary head kind on a 64-bit net
    whose rollout contains episode boundaries. Central differences at steps
    ``eps`` and ``eps/2`` are Richardson-combined, which cancels the O(eps^2)
    truncation term so the step can stay large enough to keep round-off small.
    """
    from mwmlab.arena import ArenaConfig
    from mwmlab.auxtasks import AuxSpec
    from mwmlab.net import init_params
    from mwmlab.trainer import (LossCoefs, RolloutState, collect_rollout, compute_advantages,
                                loss_and_grad, make_net_config)

    aux = AuxSpec.parse(["GD", "AD-NE", "TP", "LR-NE", "FW", "QP"])
    ac = ArenaConfig(variant="NorthPoster", max_steps=7)
    rng = np.random.default_rng(seed)
    p = init_params(rng, make_net_config(ac, aux, width), dtype=np.float64)
    p.flat[:] = rng.normal(0, 0.5, p.flat.size)
    st = RolloutState(ac, n_envs, width, np.random.SeedSequence(seed + 1000), dtype=np.float64)
    b = collect_rollout(p, st, T, aux)
    adv, ret = compute_advantages(b, 0.99, 0.95)
    b.logp = b.logp + rng.normal(0, 0.1, b.logp.shape)  # off-policy ratios exercise both clip sides
    coefs = LossCoefs(1.0, 0.5, 0.01, 1.0)
    idx = np.arange(n_envs)
    _, g = loss_and_grad(p, b, idx, adv, ret, 0.2, coefs)
    worst = 0.0

    def central(i, h):
        q = p.copy()
        q.flat[i] += h
        lp = loss_and_grad(q, b, idx, adv, ret, 0.2, coefs)[0]["loss"]
        q.flat[i] -= 2 * h
        lm = loss_and_grad(q, b, idx, adv, ret, 0.2, coefs)[0]["loss"]
        return (lp - lm) / (2 * h)

    for i in range(p.flat.size):
        fd = (4 * central(i, eps / 2) - central(i, eps)) / 3
        a = g.flat[i]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst, int(b.dones.sum())
