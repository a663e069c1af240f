"""Cosine similarity between RL gradients and auxiliary-task gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .arena import ArenaConfig
from .auxtasks import AuxSpec
from .net import ParamSet
from .trainer import (LossCoefs, RolloutBatch, RolloutState, TrainConfig, collect_rollout,
                      compute_advantages, loss_and_grad)


class UndefinedSimilarityError(ValueError):
    """Cosine similarity with a zero-norm gradient."""


def cosine(g1, g2) -> float:
    g1 = np.asarray(g1, dtype=float).ravel()
    g2 = np.asarray(g2, dtype=float).ravel()
    if g1.shape != g2.shape:
        raise ValueError("gradient lengths differ")
    n1, n2 = np.linalg.norm(g1), np.linalg.norm(g2)
    if n1 == 0 or n2 == 0:
        raise UndefinedSimilarityError("zero-norm gradient")
    if np.array_equal(g1, g2):
        return 1.0
    return float(np.clip(np.dot(g1, g2) / (n1 * n2), -1.0, 1.0))


def _safe_cosine(g1, g2):
    try:
        return cosine(g1, g2)
    except UndefinedSimilarityError:
        return None


@dataclass
class SimilarityRecord:
    checkpoint: int
    batch: int
    cosine: float | None
    goal_rewards: int = 0


def rl_gradient(params: ParamSet, batch: RolloutBatch, config: TrainConfig, rewards=None) -> np.ndarray:
    """Full-batch gradient of the training loss without auxiliary terms."""
    adv, ret = compute_advantages(batch, config.gamma, config.gae_lambda, rewards=rewards)
    coefs = LossCoefs(1.0, config.value_coef, config.entropy_coef, 0.0)
    idx = np.arange(batch.shape[1])
    return loss_and_grad(params, batch, idx, adv, ret, config.clip_eps, coefs)[1].flat.copy()


def aux_gradient(params: ParamSet, batch: RolloutBatch, config: TrainConfig) -> np.ndarray:
    """Full-batch gradient of the supervised auxiliary losses only."""
    T, B = batch.shape
    zeros = np.zeros((T, B))
    coefs = LossCoefs(0.0, 0.0, 0.0, 1.0)
    return loss_and_grad(params, batch, np.arange(B), zeros, zeros, config.clip_eps, coefs)[1].flat.copy()


def probe_supervised(params: ParamSet, arena_config: ArenaConfig, aux_spec: AuxSpec, seed: int = 0,
                     checkpoint: int = 0, config: TrainConfig | None = None, warmup_steps: int = 5000,
                     n_batches: int = 20, batch_size: int = 1600, n_reference: int = 3,
                     reference_size: int = 25600) -> list[SimilarityRecord]:
    """Per small batch: mean cosine of its aux gradient with the RL gradients of large reference batches."""
    config = config or TrainConfig()
    heads = {h.name for h in params.config.aux_heads}
    wanted = [h.name for h in aux_spec.heads]
    if not wanted or not set(wanted) <= heads:
        raise ValueError(f"checkpoint lacks auxiliary heads for {aux_spec.label()}")
    p = params.astype(np.float64)
    n = config.n_envs
    state = RolloutState(arena_config, n, p.config.hidden_width, np.random.SeedSequence(seed),
                         dtype=np.float64)
    if warmup_steps:
        collect_rollout(p, state, warmup_steps // n, aux_spec)
    aux_grads = [aux_gradient(p, collect_rollout(p, state, batch_size // n, aux_spec), config)
                 for _ in range(n_batches)]
    refs = [rl_gradient(p, collect_rollout(p, state, reference_size // n, aux_spec), config)
            for _ in range(n_reference)]
    records = []
    for i, g in enumerate(aux_grads):
        sims = [_safe_cosine(g, r) for r in refs]
        sims = [s for s in sims if s is not None]
        records.append(SimilarityRecord(checkpoint, i, float(np.mean(sims)) if sims else None))
    return records


def probe_reward(params: ParamSet, arena_config: ArenaConfig, aux_spec: AuxSpec, seed: int = 0,
                 checkpoint: int = 0, config: TrainConfig | None = None, warmup_steps: int = 5000,
                 n_batches: int = 20, batch_size: int = 1600) -> list[SimilarityRecord]:
    """Per batch: cosine between the full RL gradient and the goal-stripped ("pure bonus") gradient."""
    config = config or TrainConfig()
    if not aux_spec.reward_tasks:
        raise ValueError("reward probe needs a reward task (RD or RE)")
    p = params.astype(np.float64)
    n = config.n_envs
    state = RolloutState(arena_config, n, p.config.hidden_width, np.random.SeedSequence(seed),
                         dtype=np.float64)
    if warmup_steps:
        collect_rollout(p, state, warmup_steps // n, aux_spec)
    records = []
    for i in range(n_batches):
        batch = collect_rollout(p, state, batch_size // n, aux_spec)
        g_full = rl_gradient(p, batch, config)
        if batch.goal_count == 0:
            g_bonus = g_full
        else:
            g_bonus = rl_gradient(p, batch, config, rewards=batch.rewards_bonus)
        records.append(SimilarityRecord(checkpoint, i, _safe_cosine(g_full, g_bonus), batch.goal_count))
    return records


# aggregation ------------------------------------------------------------------

def confidence_interval(values, level: float = 0.95, method: str = "t", n_boot: int = 2000,
                        seed: int = 0) -> tuple[float, float, float]:
    """(mean, low, high) of the non-null ``values``; t-interval or percentile bootstrap."""
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if len(v) == 0:
        return (math.nan, math.nan, math.nan)
    m = float(v.mean())
    if len(v) == 1:
        return (m, m, m)
    if method == "bootstrap":
        rng = np.random.default_rng(seed)
        boots = rng.choice(v, size=(n_boot, len(v)), replace=True).mean(axis=1)
        lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
        return (m, float(lo), float(hi))
    half = stats.t.ppf((1 + level) / 2, len(v) - 1) * v.std(ddof=1) / math.sqrt(len(v))
    return (m, m - half, m + half)


def running_exponential_mean(records: list[SimilarityRecord], alpha: float = 0.05):
    """Records sorted by goal-reward count with an exponential running mean of the cosine."""
    rows = sorted((r for r in records if r.cosine is not None), key=lambda r: (r.goal_rewards, r.checkpoint, r.batch))
    out, ema = [], None
    for r in rows:
        ema = r.cosine if ema is None else (1 - alpha) * ema + alpha * r.cosine
        out.append((r.goal_rewards, r.cosine, ema))
    return out
