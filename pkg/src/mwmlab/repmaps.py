"""Spatial and heading representation maps of actor layer-1 nodes, and their scores."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arena import ArenaConfig, wrap_angle
from .behavior import record_trajectories
from .net import ParamSet

SPATIAL_SIGMA = 20.0
SCORE_SIGMA = 50.0
GRID_N = 30
N_ANGLES = 100


def edge_initial_conditions(config: ArenaConfig | None = None, per_wall: int = 30) -> np.ndarray:
    """Equidistant points along all four walls (corners once), each facing the arena center."""
    L = (config or ArenaConfig()).arena_side
    s = np.linspace(0.0, L, per_wall)
    pts = np.concatenate([
        np.column_stack([s, np.zeros_like(s)]),
        np.column_stack([s, np.full_like(s, L)]),
        np.column_stack([np.zeros_like(s), s]),
        np.column_stack([np.full_like(s, L), s]),
    ])
    pts = np.unique(pts, axis=0)
    heading = np.arctan2(L / 2 - pts[:, 1], L / 2 - pts[:, 0])
    return np.column_stack([pts, heading])


@dataclass
class ActivationTrace:
    """Per-step agent pose and layer activations, pooled over episodes."""

    poses: np.ndarray        # (N, 3) pose at which each activation was produced
    activations: np.ndarray  # (N, H)
    episode: np.ndarray      # (N,)

    @property
    def n_nodes(self) -> int:
        return self.activations.shape[1]


def collect_traces(params: ParamSet, arena_config: ArenaConfig, random_poses) -> ActivationTrace:
    """Greedy episodes from the saved random poses plus the edge starts."""
    starts = np.concatenate([np.asarray(random_poses, dtype=float).reshape(-1, 3),
                             edge_initial_conditions(arena_config)])
    trajs = record_trajectories(params, arena_config, starts, activations=True, check_start=False)
    poses = np.concatenate([t.poses[:-1] for t in trajs])
    acts = np.concatenate([t.activations for t in trajs])
    ep = np.concatenate([np.full(t.length, i) for i, t in enumerate(trajs)])
    return ActivationTrace(poses, acts, ep)


def spatial_grid(config: ArenaConfig | None = None, n: int = GRID_N) -> np.ndarray:
    """``n*n`` cell-center points covering the arena, shape ``(n*n, 2)``."""
    L = (config or ArenaConfig()).arena_side
    c = (np.arange(n) + 0.5) * L / n
    gx, gy = np.meshgrid(c, c, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def angle_grid(n: int = N_ANGLES) -> np.ndarray:
    return -math.pi + 2 * math.pi * np.arange(n) / n


def _kernel_mean(dist_fn, grid, samples, z, sigma, chunk=4096):
    """``a_i = mean_j z_j exp(-d(grid_i, sample_j) / sigma)`` for every column of ``z``."""
    z = np.asarray(z, dtype=float)
    squeeze = z.ndim == 1
    z = z.reshape(len(z), -1)
    acc = np.zeros((len(grid), z.shape[1]))
    for s in range(0, len(samples), chunk):
        k = np.exp(-dist_fn(grid, samples[s:s + chunk]) / sigma)
        acc += k @ z[s:s + chunk]
    a = acc / len(samples)
    a -= a.mean(axis=0, keepdims=True)
    return a[:, 0] if squeeze else a


def _euclid(grid, pts):
    return np.hypot(grid[:, None, 0] - pts[None, :, 0], grid[:, None, 1] - pts[None, :, 1])


def _circular(grid, angles):
    return np.abs(wrap_angle(grid[:, None] - angles[None, :]))


def spatial_heatmap(positions, z, config: ArenaConfig | None = None, sigma: float = SPATIAL_SIGMA,
                    n: int = GRID_N) -> np.ndarray:
    """Mean-subtracted kernel-weighted activation over the ``n*n`` grid (flattened, row = y)."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(pos) == 0:
        raise ValueError("empty trace")
    return _kernel_mean(_euclid, spatial_grid(config, n), pos, z, sigma)


def direction_map(headings, z, sigma: float = SPATIAL_SIGMA, n: int = N_ANGLES) -> np.ndarray:
    """Mean-subtracted kernel-weighted activation over ``n`` heading grid angles."""
    h = np.asarray(headings, dtype=float).ravel()
    if len(h) == 0:
        raise ValueError("empty trace")
    return _kernel_mean(_circular, angle_grid(n), h, z, sigma)


def spatial_score(heatmap, points=None, sigma: float = SCORE_SIGMA) -> float:
    """Same-sign pairwise cohesion over total squared activation.

    Ordered pairs including self-pairs; an all-zero map scores 0.
    """
    a = np.asarray(heatmap, dtype=float).ravel()
    pts = spatial_grid(n=int(round(math.sqrt(len(a))))) if points is None else np.asarray(points, float)
    denom = float(np.sum(a * a))
    if denom == 0.0:
        return 0.0
    total = 0.0
    for sel in (a > 0, a < 0):
        if sel.any():
            k = np.exp(-_euclid(pts[sel], pts[sel]) / sigma)
            total += float(a[sel] @ k @ a[sel])
    return total / denom


def direction_score(dmap, angles=None) -> float:
    """Average of the positive-side and negative-side mean resultant lengths."""
    a = np.asarray(dmap, dtype=float).ravel()
    th = angle_grid(len(a)) if angles is None else np.asarray(angles, dtype=float)
    lengths = []
    for sel in (a > 0, a < 0):
        if sel.any():
            v = np.abs(a[sel])
            lengths.append(math.hypot(np.mean(v * np.cos(th[sel])), np.mean(v * np.sin(th[sel]))))
        else:
            lengths.append(0.0)
    return (lengths[0] + lengths[1]) / 2


def node_scores(trace: ActivationTrace, config: ArenaConfig | None = None,
                angular_sigma: float = SPATIAL_SIGMA):
    """Heatmaps, direction maps and per-node scores for every node of a trace."""
    heat = spatial_heatmap(trace.poses[:, :2], trace.activations, config)
    dirs = direction_map(trace.poses[:, 2], trace.activations, sigma=angular_sigma)
    grid = spatial_grid(config)
    s = np.array([spatial_score(heat[:, j], grid) for j in range(trace.n_nodes)])
    d = np.array([direction_score(dirs[:, j]) for j in range(trace.n_nodes)])
    return heat, dirs, s, d


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares ``(slope, intercept, r_squared)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        return (math.nan, math.nan, math.nan)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else math.nan
    return float(slope), float(intercept), r2
