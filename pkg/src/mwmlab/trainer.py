"""Recurrent PPO: rollout collection, GAE, clipped updates and the training loop."""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import auxtasks
from .arena import ArenaConfig, VecArena
from .auxtasks import AuxSpec
from .net import NetConfig, ParamSet, forward, forward_sequence, backward, init_params, save_checkpoint

log = logging.getLogger(__name__)

DEFAULT_CHECKPOINTS = (0, 100_000, 200_000, 300_000, 500_000, 1_000_000, 1_500_000, 2_500_000)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    n_envs: int = 100
    batch_size: int = 1600
    total_steps: int = 3_000_000
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    ppo_epochs: int = 4
    minibatch_count: int = 4
    learning_rate: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    aux_coef: float = 1.0
    grad_clip_norm: float = 0.5
    checkpoint_steps: tuple[int, ...] = DEFAULT_CHECKPOINTS
    episode_window: int = 10  # batches in the episode-length sliding window

    def __post_init__(self):
        self.checkpoint_steps = tuple(int(s) for s in self.checkpoint_steps)
        if self.batch_size % self.n_envs:
            raise ValueError("batch_size must be divisible by n_envs")
        if list(self.checkpoint_steps) != sorted(self.checkpoint_steps):
            raise ValueError("checkpoint_steps must be ascending")
        if self.checkpoint_steps and self.checkpoint_steps[-1] > self.total_steps:
            raise ValueError("checkpoint_steps must not exceed total_steps")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.n_envs % self.minibatch_count:
            raise ValueError("n_envs must be divisible by minibatch_count")

    @property
    def horizon(self) -> int:
        return self.batch_size // self.n_envs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checkpoint_steps"] = list(self.checkpoint_steps)
        return d


@dataclass
class RolloutBatch:
    """``T`` steps from ``B`` environments; arrays are ``(T, B, ...)``."""

    obs: np.ndarray
    h0: np.ndarray              # (B, H) hidden before step 0, prior to any reset
    starts: np.ndarray          # (T, B) hidden zeroed before step t
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards_base: np.ndarray
    rewards_bonus: np.ndarray
    dones: np.ndarray
    truncs: np.ndarray
    boot_values: np.ndarray     # V(terminal obs) on truncated steps, else 0
    last_value: np.ndarray      # (B,) V of the observation after step T-1
    targets: dict = field(default_factory=dict)   # head -> (T, B) values or class ids
    target_mask: dict = field(default_factory=dict)
    poses: np.ndarray | None = None
    episode_lengths: list = field(default_factory=list)
    episode_bonus: list = field(default_factory=list)

    @property
    def rewards(self) -> np.ndarray:
        return self.rewards_base + self.rewards_bonus

    @property
    def goal_count(self) -> int:
        return int(self.rewards_base.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.dones.shape


class RolloutState:
    """Persistent vectorized environments and hidden states across batches."""

    def __init__(self, arena_config: ArenaConfig, n_envs: int, hidden_width: int,
                 seed_seq: np.random.SeedSequence, dtype=np.float32):
        env_ss, act_ss = seed_seq.spawn(2)
        self.envs = VecArena(arena_config, n_envs, np.random.default_rng(env_ss), autoreset=True)
        self.action_rng = np.random.default_rng(act_ss)
        self.obs = self.envs.reset()
        self.hidden = np.zeros((n_envs, hidden_width), dtype=dtype)
        self.prev_done = np.zeros(n_envs, dtype=bool)
        self.ep_bonus = np.zeros(n_envs)


def sample_actions(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    u = rng.random(probs.shape[0])
    a = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(a, probs.shape[1] - 1)


def _log_softmax(logits):
    m = logits - logits.max(axis=-1, keepdims=True)
    return m - np.log(np.exp(m).sum(axis=-1, keepdims=True))


def collect_rollout(params: ParamSet, state: RolloutState, T: int, aux_spec: AuxSpec,
                    greedy: bool = False) -> RolloutBatch:
    """Run the policy for ``T`` steps in every environment."""
    envs = state.envs
    cfg = envs.config
    B, H = envs.n, params.config.hidden_width
    dt = params.flat.dtype
    obs = np.empty((T, B, cfg.obs_dim), dtype=dt)
    starts = np.empty((T, B), dtype=bool)
    actions = np.empty((T, B), dtype=np.int64)
    logp = np.empty((T, B), dtype=dt)
    values = np.empty((T, B), dtype=dt)
    r_base = np.empty((T, B)); r_bonus = np.empty((T, B))
    dones = np.empty((T, B), dtype=bool); truncs = np.empty((T, B), dtype=bool)
    boot = np.zeros((T, B), dtype=dt)
    ep_step = np.empty((T, B), dtype=np.int64)
    poses = np.empty((T, B, 3))
    heads = {h.name for h in params.config.aux_heads}
    supervised = [t for t in aux_spec.tasks if t in heads and t != "TP"]
    targets = {t: np.empty((T, B)) for t in supervised}
    ep_lengths, ep_bonus = [], []
    h0 = state.hidden.copy()
    h = state.hidden
    for t in range(T):
        starts[t] = state.prev_done
        h = h * (~state.prev_done)[:, None]
        obs[t] = state.obs
        poses[t] = envs.poses
        ep_step[t] = envs.step_index
        for name, v in auxtasks.compute_targets(aux_spec, envs.x, envs.y, envs.heading, cfg).items():
            if name in targets:
                targets[name][t] = v
        out = forward(params, state.obs, h)
        probs = out.policy
        a = probs.argmax(axis=1) if greedy else sample_actions(state.action_rng, probs)
        actions[t] = a
        logp[t] = _log_softmax(out.logits)[np.arange(B), a]
        values[t] = out.value
        h = out.hidden_next
        next_obs, reward, done, info = envs.step(a)
        post = info["pose"]  # post-move pose, before any autoreset
        bonus = auxtasks.bonus_rewards(aux_spec, post[:, 0], post[:, 1], info["new_chunk"], cfg)
        r_base[t], r_bonus[t], dones[t], truncs[t] = reward, bonus, done, info["truncated"]
        state.ep_bonus += bonus
        if np.any(info["truncated"]):
            idx = np.flatnonzero(done)
            tr = info["truncated"][idx]
            if np.any(tr):
                vt = forward(params, info["terminal_obs"][tr], h[idx[tr]]).value
                boot[t, idx[tr]] = vt
        if np.any(done):
            idx = np.flatnonzero(done)
            ep_lengths.extend(info["step_index"][idx].tolist())
            ep_bonus.extend(state.ep_bonus[idx].tolist())
            state.ep_bonus[idx] = 0.0
        state.obs = next_obs
        state.prev_done = done
    state.hidden = h
    h_last = h * (~state.prev_done)[:, None]
    last_value = forward(params, state.obs, h_last).value
    batch = RolloutBatch(obs, h0, starts, actions, logp, values, r_base, r_bonus, dones, truncs,
                         boot, last_value, poses=poses, episode_lengths=ep_lengths,
                         episode_bonus=ep_bonus)
    for name in supervised:
        batch.targets[name] = targets[name]
        batch.target_mask[name] = np.ones((T, B), dtype=bool)
    if "TP" in heads and "TP" in aux_spec.tasks:
        tp, mask = auxtasks.terminal_targets(dones, ep_step, cfg.max_steps)
        batch.targets["TP"], batch.target_mask["TP"] = tp, mask
    return batch


def compute_advantages(batch: RolloutBatch, gamma: float, lam: float, rewards=None,
                       normalize: bool = True):
    """GAE(lambda) advantages and returns.

    Episode ends cut the recursion; truncated steps bootstrap from the value
    of their terminal observation. Returns ``(advantages, returns)`` where
    ``returns`` use the raw advantages and ``advantages`` are normalized to
    zero mean and unit std when ``normalize`` (unless all equal).
    """
    r = batch.rewards if rewards is None else rewards
    T, B = batch.shape
    values = batch.values.astype(float)
    nonterm = 1.0 - batch.dones
    adv = np.zeros((T, B))
    last = np.zeros(B)
    next_v = batch.last_value.astype(float)
    for t in range(T - 1, -1, -1):
        delta = r[t] + gamma * (nonterm[t] * next_v + batch.truncs[t] * batch.boot_values[t]) - values[t]
        last = delta + gamma * lam * nonterm[t] * last
        adv[t] = last
        next_v = values[t]
    returns = adv + values
    if normalize:
        adv = normalize_advantages(adv)
    return adv, returns


def normalize_advantages(adv):
    std = adv.std()
    if std < 1e-12:
        return adv
    return (adv - adv.mean()) / std


@dataclass
class LossCoefs:
    policy: float = 1.0
    value: float = 0.5
    entropy: float = 0.01
    aux: float = 1.0


def loss_and_grad(params: ParamSet, batch: RolloutBatch, env_idx, advantages, returns,
                  clip_eps: float, coefs: LossCoefs):
    """Total PPO loss on the environments ``env_idx`` and its exact gradient.

    Loss = policy_coef * clipped surrogate + value_coef * MSE(V, R)
    - entropy_coef * entropy + aux_coef * sum of auxiliary losses.
    Returns ``(stats, grad)``.
    """
    idx = np.asarray(env_idx)
    seq = forward_sequence(params, batch.obs[:, idx], batch.h0[idx], batch.starts[:, idx])
    T, B = seq.value.shape
    N = T * B
    logits = seq.logits.astype(float)
    logp_all = _log_softmax(logits)
    p = np.exp(logp_all)
    a = batch.actions[:, idx]
    onehot_a = (a[..., None] == np.arange(logits.shape[-1]))
    logp_a = np.take_along_axis(logp_all, a[..., None], axis=-1)[..., 0]
    ratio = np.exp(logp_a - batch.logp[:, idx])
    A = advantages[:, idx]
    s1 = ratio * A
    s2 = np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * A
    policy_loss = -np.mean(np.minimum(s1, s2))
    d_logp = -(s1 * (s1 <= s2)) / N * coefs.policy
    d_logits = d_logp[..., None] * (onehot_a - p)

    ent = -(p * logp_all).sum(-1)
    entropy = ent.mean()
    d_logits += coefs.entropy / N * p * (logp_all + ent[..., None])

    v = seq.value.astype(float)
    R = returns[:, idx]
    value_loss = np.mean((v - R) ** 2)
    d_value = coefs.value * 2.0 * (v - R) / N

    stats = {"policy_loss": policy_loss, "value_loss": value_loss, "entropy": entropy,
             "approx_kl": float(np.mean(batch.logp[:, idx] - logp_a)),
             "clip_frac": float(np.mean(np.abs(ratio - 1) > clip_eps))}
    d_aux = {}
    aux_total = 0.0
    for head in params.config.aux_heads:
        if head.name not in batch.targets:
            continue
        y = batch.targets[head.name][:, idx]
        m = batch.target_mask[head.name][:, idx]
        out = seq.aux[head.name].astype(float)
        cnt = m.sum()
        if head.categorical:
            yh = auxtasks.one_hot(y.astype(int), head.dim)
            loss = auxtasks.aux_loss_categorical(out, yh, m)
            d = (out - yh) * (m / max(cnt, 1))[..., None]
        else:
            loss = auxtasks.aux_loss_numeric(out[..., 0], y, m)
            d = (2.0 * (out[..., 0] - y) * m / max(cnt, 1))[..., None]
        stats[f"aux_{head.name}"] = loss
        aux_total += loss
        d_aux[head.name] = coefs.aux * d
    stats["aux_loss"] = aux_total
    stats["loss"] = (coefs.policy * policy_loss + coefs.value * value_loss
                     - coefs.entropy * entropy + coefs.aux * aux_total)
    if not np.isfinite(stats["loss"]):
        raise TrainingDivergedError(f"non-finite loss: {stats}")
    grad = backward(params, seq.cache, d_logits, d_value, d_aux)
    return stats, grad


class Adam:
    def __init__(self, n: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-5, dtype=np.float32):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = np.zeros(n, dtype=dtype)
        self.v = np.zeros(n, dtype=dtype)
        self.t = 0

    def step(self, flat: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m *= self.b1
        self.m += (1 - self.b1) * grad
        self.v *= self.b2
        self.v += (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        flat -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(flat.dtype)

    def state_dict(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t}


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> float:
    norm = float(np.sqrt(np.dot(grad.astype(float), grad.astype(float))))
    if max_norm and norm > max_norm:
        grad *= max_norm / (norm + 1e-6)
    return norm


def coefs_from(config: TrainConfig) -> LossCoefs:
    return LossCoefs(1.0, config.value_coef, config.entropy_coef, config.aux_coef)


def ppo_update(params: ParamSet, batch: RolloutBatch, config: TrainConfig, optimizer: Adam,
               rng: np.random.Generator):
    """Epochs of clipped PPO over environment-partitioned minibatches (in place).

    Returns ``(params, stats)`` with stats averaged over all minibatch steps.
    """
    adv, ret = compute_advantages(batch, config.gamma, config.gae_lambda)
    B = batch.shape[1]
    coefs = coefs_from(config)
    acc: dict = {}
    n = 0
    for _ in range(config.ppo_epochs):
        perm = rng.permutation(B)
        for mb in np.array_split(perm, config.minibatch_count):
            stats, grad = loss_and_grad(params, batch, np.sort(mb), adv, ret, config.clip_eps, coefs)
            stats["grad_norm"] = clip_grad_norm(grad.flat, config.grad_clip_norm)
            optimizer.step(params.flat, grad.flat)
            for k, v in stats.items():
                acc[k] = acc.get(k, 0.0) + float(v)
            n += 1
    return params, {k: v / n for k, v in acc.items()}


def make_net_config(arena_config: ArenaConfig, aux_spec: AuxSpec, hidden_width: int = 16) -> NetConfig:
    return NetConfig(arena_config.obs_dim, hidden_width, 4, aux_spec.heads)


LOG_COLUMNS = ["total_steps", "mean_episode_len", "policy_loss", "value_loss", "entropy"]


def checkpoint_name(step: int) -> str:
    return f"ckpt_{int(step):08d}.bin"


def train(config: TrainConfig, arena_config: ArenaConfig, aux_spec: AuxSpec, seed: int, out_dir,
          hidden_width: int = 16, progress: bool = False) -> dict:
    """Train one agent, writing checkpoints and ``log.csv`` into ``out_dir``.

    Returns a summary dict with checkpoint paths and final statistics.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    init_ss, roll_ss, mb_ss = root.spawn(3)
    net_config = make_net_config(arena_config, aux_spec, hidden_width)
    params = init_params(np.random.default_rng(init_ss), net_config)
    state = RolloutState(arena_config, config.n_envs, hidden_width, roll_ss)
    mb_rng = np.random.default_rng(mb_ss)
    opt = Adam(net_config.n_params, config.learning_rate)
    T = config.horizon
    heads = [h.name for h in net_config.aux_heads]
    columns = LOG_COLUMNS + [f"aux_{h}" for h in heads] + ["goal_rewards_in_batch"]
    window: deque = deque(maxlen=config.episode_window)
    pending = list(config.checkpoint_steps)
    checkpoints = {}
    meta_base = {"seed": seed, "tasks": list(aux_spec.tasks), "variant": arena_config.variant.value,
                 "batch_size": config.batch_size}

    def save(step):
        path = out / checkpoint_name(step)
        save_checkpoint(path, params, {**meta_base, "timesteps": int(step)})
        checkpoints[int(step)] = str(path)

    total = 0
    with open(out / "log.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        while pending and pending[0] <= total:
            save(pending.pop(0))
        while total < config.total_steps:
            batch = collect_rollout(params, state, T, aux_spec)
            total += config.batch_size
            _, stats = ppo_update(params, batch, config, opt, mb_rng)
            window.append(batch.episode_lengths)
            lens = [l for b in window for l in b]
            mean_len = float(np.mean(lens)) if lens else math.nan
            row = [total, mean_len, stats["policy_loss"], stats["value_loss"], stats["entropy"]]
            row += [stats.get(f"aux_{h}", math.nan) for h in heads]
            row.append(batch.goal_count)
            writer.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in row])
            while pending and pending[0] <= total:
                save(pending.pop(0))
            if progress and (total // config.batch_size) % 50 == 0:
                log.info("steps=%d mean_len=%.1f entropy=%.3f", total, mean_len, stats["entropy"])
    save_checkpoint(out / "final.bin", params, {**meta_base, "timesteps": total})
    summary = {"checkpoints": checkpoints, "final": str(out / "final.bin"), "total_steps": total,
               "log": str(out / "log.csv")}
    (out / "run.json").write_text(json.dumps({
        "seed": seed, "arena": arena_config.to_dict(), "train": config.to_dict(),
        "tasks": list(aux_spec.tasks), "hidden_width": hidden_width, **summary}, indent=2))
    return summary
