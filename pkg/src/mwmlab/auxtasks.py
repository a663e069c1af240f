"""Auxiliary tasks: supervised targets, their losses, and reward bonuses.

Supervised tasks add a head on the final actor layer; reward tasks add a
bonus to the reward stream and have no head.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arena import ArenaConfig, wrap_angle
from .net import HeadSpec

DIRECTION_ANGLE = {"N": math.pi / 2, "E": 0.0}
RD_MAX_BONUS = 0.0015
RE_BONUS = 0.01
CE_FLOOR = 1e-10

# head name -> (kind, dim)
_HEADS = {
    "GD": ("numeric", 1),
    "AD-N": ("numeric", 1),
    "AD-E": ("numeric", 1),
    "TP": ("numeric", 1),
    "LR-N": ("categorical", 2),
    "LR-E": ("categorical", 2),
    "FW": ("categorical", 4),
    "QP": ("categorical", 4),
}
_REWARD_TASKS = ("RD", "RE")
_EXPANSIONS = {
    "AD-NE": ("AD-N", "AD-E"),
    "LR-NE": ("LR-N", "LR-E"),
    "FW+QP": ("FW", "QP"),
}
TASK_NAMES = ("GD", "AD-N", "AD-E", "AD-NE", "TP", "LR-N", "LR-E", "LR-NE", "FW", "QP", "RD", "RE", "FW+QP")


@dataclass(frozen=True)
class AuxSpec:
    """Selected auxiliary tasks, after expanding combined names."""

    tasks: tuple[str, ...] = ()

    @classmethod
    def parse(cls, names) -> "AuxSpec":
        if isinstance(names, str):
            names = [n for n in names.replace(",", " ").split() if n]
        out: list[str] = []
        for name in names or ():
            if name in ("", "none", "control"):
                continue
            if name not in TASK_NAMES:
                raise ValueError(f"unknown auxiliary task {name!r}; choose from {', '.join(TASK_NAMES)}")
            for t in _EXPANSIONS.get(name, (name,)):
                if t not in out:
                    out.append(t)
        return cls(tuple(out))

    @property
    def heads(self) -> tuple[HeadSpec, ...]:
        return tuple(HeadSpec(t, _HEADS[t][1]) for t in self.tasks if t in _HEADS)

    @property
    def reward_tasks(self) -> tuple[str, ...]:
        return tuple(t for t in self.tasks if t in _REWARD_TASKS)

    def kind(self, task: str) -> str:
        return "reward" if task in _REWARD_TASKS else _HEADS[task][0]

    def label(self) -> str:
        return "+".join(self.tasks) if self.tasks else "control"


# numeric targets ----------------------------------------------------------

def target_GD(x, y, config: ArenaConfig):
    """Distance to the platform center over the farthest-corner distance."""
    cx, cy = config.platform_center
    return np.hypot(np.asarray(x) - cx, np.asarray(y) - cy) / config.goal_dist_max


def target_AD(heading, direction: str):
    """Shortest angular distance from heading to a cardinal direction, over pi."""
    return np.abs(wrap_angle(np.asarray(heading) - DIRECTION_ANGLE[direction])) / math.pi


def target_TP(episode_lengths, step_in_episode, max_steps: int = 200):
    """Normalized steps remaining: ``(T_e - t) / max_steps``."""
    return (np.asarray(episode_lengths) - np.asarray(step_in_episode)) / max_steps


def terminal_targets(dones, ep_step, max_steps: int = 200):
    """Terminal-prediction targets and mask for a ``(T, B)`` rollout.

    ``ep_step[t, b]`` is the in-episode step index of the observation at ``t``.
    Steps of episodes still running at the end of the rollout are masked out.
    """
    dones = np.asarray(dones, dtype=bool)
    ep_step = np.asarray(ep_step)
    T, B = dones.shape
    target = np.zeros((T, B))
    mask = np.zeros((T, B), dtype=bool)
    length = np.full(B, -1)  # length of the episode containing t, -1 if unfinished
    for t in range(T - 1, -1, -1):
        length = np.where(dones[t], ep_step[t] + 1, length)
        mask[t] = length >= 0
        target[t] = np.where(mask[t], (length - ep_step[t]) / max_steps, 0.0)
    return target, mask


# categorical targets --------------------------------------------------------

LEFT, RIGHT = 0, 1
FW_CLASSES = ("E", "N", "W", "S")
QP_CLASSES = ("NE", "NW", "SW", "SE")


def target_LR(heading, direction: str):
    """0 (Left) if the direction is reached faster by turning left, else 1 (Right)."""
    d = wrap_angle(DIRECTION_ANGLE[direction] - np.asarray(heading))
    # wrap gives (-pi, pi]; the ties 0 and pi both go Left
    return np.where(d >= 0, LEFT, RIGHT)


def target_FW(heading):
    """Faced wall index into ``FW_CLASSES`` by half-open heading quadrants."""
    h = np.asarray(wrap_angle(heading))
    q = np.floor((h + math.pi / 4) / (math.pi / 2)).astype(int)
    # q: 0 east, 1 north, 2 west (h >= 3pi/4), -1 south, -2 west (h < -3pi/4)
    return np.select([q == 0, q == 1, q == -1], [0, 1, 3], default=2)


def target_QP(x, y, config: ArenaConfig):
    """Quadrant index into ``QP_CLASSES``; the midlines belong to east/north."""
    mid = config.arena_side / 2
    east = np.asarray(x) >= mid
    north = np.asarray(y) >= mid
    return np.select([east & north, ~east & north, ~east & ~north], [0, 1, 2], default=3)


def one_hot(labels, dim: int) -> np.ndarray:
    labels = np.asarray(labels)
    return (labels[..., None] == np.arange(dim)).astype(float)


def compute_targets(spec: AuxSpec, x, y, heading, config: ArenaConfig) -> dict:
    """Per-head targets for the current state (TP excluded: it needs the future).

    Numeric heads give arrays of shape ``(n,)``, categorical heads class indices.
    """
    out = {}
    for t in spec.tasks:
        if t == "GD":
            out[t] = target_GD(x, y, config)
        elif t.startswith("AD-"):
            out[t] = target_AD(heading, t[-1])
        elif t.startswith("LR-"):
            out[t] = target_LR(heading, t[-1])
        elif t == "FW":
            out[t] = target_FW(heading)
        elif t == "QP":
            out[t] = target_QP(x, y, config)
    return out


# losses ---------------------------------------------------------------------

def aux_loss_numeric(preds, targets, mask=None) -> float:
    """Mean squared error over unmasked steps (0 when nothing is unmasked)."""
    preds, targets = np.asarray(preds, dtype=float), np.asarray(targets, dtype=float)
    if preds.shape != targets.shape:
        raise ValueError("prediction/target length mismatch")
    m = np.ones(preds.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not m.any():
        return 0.0
    return float(np.mean((targets[m] - preds[m]) ** 2))


def aux_loss_categorical(prob_preds, one_hot_targets, mask=None) -> float:
    """Mean cross-entropy ``-log p`` at the true class, ``p`` floored at 1e-10."""
    p = np.asarray(prob_preds, dtype=float)
    y = np.asarray(one_hot_targets, dtype=float)
    if p.shape != y.shape:
        raise ValueError("prediction/target shape mismatch")
    per = -np.sum(y * np.log(np.maximum(p, CE_FLOOR)), axis=-1)
    m = np.ones(per.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not m.any():
        return 0.0
    return float(per[m].mean())


# reward bonuses -------------------------------------------------------------

def reward_RD(x, y, config: ArenaConfig):
    """Proximity bonus: 0.0015 at the platform center falling linearly to 0 at the farthest corner."""
    return RD_MAX_BONUS * (1.0 - target_GD(x, y, config))


def reward_RE(new_chunk):
    """0.01 for entering a chunk not yet visited this episode."""
    return RE_BONUS * np.asarray(new_chunk, dtype=float)


def bonus_rewards(spec: AuxSpec, x, y, new_chunk, config: ArenaConfig):
    bonus = np.zeros(np.shape(x))
    if "RD" in spec.tasks:
        bonus = bonus + reward_RD(x, y, config)
    if "RE" in spec.tasks:
        bonus = bonus + reward_RE(new_chunk)
    return bonus
