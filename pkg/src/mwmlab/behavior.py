"""Trajectory recording, feature-based strategy classification and rendering."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .arena import ArenaConfig, VecArena, in_platform, sample_initial_poses, wrap_angle
from .net import ParamSet, forward


class Strategy(str, enum.Enum):
    Direct = "Direct"
    Indirect = "Indirect"
    CornerTest = "CornerTest"
    Circling = "Circling"
    Stuck = "Stuck"

    @property
    def spatial(self) -> bool:
        return self in (Strategy.Direct, Strategy.Indirect, Strategy.CornerTest)


STRATEGIES = tuple(Strategy)


@dataclass
class Trajectory:
    poses: np.ndarray     # (length + 1, 3): start pose then the pose after each action
    actions: np.ndarray   # (length,)
    reached_goal: bool
    activations: np.ndarray | None = None  # (length, H) actor layer-1, optional

    @property
    def length(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict:
        return {"poses": self.poses.round(4).tolist(), "actions": self.actions.tolist(),
                "reached_goal": bool(self.reached_goal)}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(np.asarray(d["poses"], dtype=float), np.asarray(d["actions"], dtype=int),
                   bool(d["reached_goal"]))


def record_trajectories(params: ParamSet, arena_config: ArenaConfig, initial_poses,
                        greedy: bool = True, rng: np.random.Generator | None = None,
                        activations: bool = False, check_start: bool = True) -> list[Trajectory]:
    """Run one episode per initial pose (vectorized) and return the trajectories.

    Greedy evaluation takes the argmax action. Episodes run until the
    platform is reached or the step limit elapses.
    """
    poses0 = np.asarray(initial_poses, dtype=float).reshape(-1, 3)
    n = len(poses0)
    env = VecArena(arena_config, n, rng, autoreset=False)
    obs = env.reset(poses0) if check_start else env.reset_unchecked(poses0)
    h = np.zeros((n, params.config.hidden_width), dtype=params.flat.dtype)
    T = arena_config.max_steps
    P = np.empty((T + 1, n, 3)); P[0] = env.poses
    A = np.full((T, n), -1, dtype=int)
    act = np.empty((T, n, params.config.hidden_width)) if activations else None
    lengths = np.full(n, T)
    goal = np.zeros(n, dtype=bool)
    for t in range(T):
        out = forward(params, obs, h)
        if greedy:
            a = out.policy.argmax(axis=1)
        else:
            u = rng.random(n)
            a = np.minimum((np.cumsum(out.policy, axis=1) < u[:, None]).sum(axis=1), 3)
        live = ~env.finished
        A[t] = np.where(live, a, -1)
        if act is not None:
            act[t] = out.actor_l1
        h = out.hidden_next
        obs, _, done, info = env.step(a)
        P[t + 1] = env.poses
        newly = done & live
        lengths[newly] = t + 1
        goal |= info["reached_goal"]
        if np.all(env.finished):
            break
    trajs = []
    for i in range(n):
        L = lengths[i]
        trajs.append(Trajectory(P[:L + 1, i].copy(), A[:L, i].copy(), bool(goal[i]),
                                act[:L, i].copy() if act is not None else None))
    return trajs


def record_trajectory(params: ParamSet, arena_config: ArenaConfig, initial_pose) -> Trajectory:
    return record_trajectories(params, arena_config, [initial_pose])[0]


# features -------------------------------------------------------------------

@dataclass
class Thresholds:
    dwell_radius: float = 15.0
    corner_radius: float = 100.0
    stuck_dwell_frac: float = 0.5
    stuck_fast_success: int = 60
    circling_sweep: float = 1.5 * math.pi
    circling_cv: float = 0.35
    loop_sweep: float = 1.8 * math.pi  # a full revolution about the center is circling at any wall distance
    loop_core_radius: float = 60.0     # steps inside this central disc do not count toward a revolution
    corner_efficiency: float = 0.7
    direct_efficiency: float = 0.7
    fallback_sweep: float = math.pi
    max_corner_tests: int = 1  # non-goal corners visited before the goal for a corner test


@dataclass
class TrajectoryFeatures:
    length: int
    success: bool
    path_efficiency: float
    angular_sweep: float
    wall_dist_cv: float
    max_dwell: int
    corner_hit: bool            # entered a non-goal corner disc before reaching the goal
    corner_efficiency: float    # path efficiency from start to that first entry
    corners_visited: int        # distinct non-goal corners entered before the goal
    outer_sweep: float = 0.0    # angular sweep over steps that stay outside the central disc


def _efficiency(xy: np.ndarray) -> float:
    path = float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if len(xy) > 1 else 0.0
    if path <= 1e-9:
        return 0.0
    return min(1.0, float(np.hypot(*(xy[-1] - xy[0]))) / path)


def _max_dwell(xy: np.ndarray, radius: float) -> int:
    """Longest run of steps staying within ``radius`` of the run's first position."""
    n = len(xy)
    d = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
    outside = np.triu(d > radius, k=1)
    best = 0
    for i in range(n):
        j = np.flatnonzero(outside[i])
        end = j[0] if len(j) else n  # first pose that leaves the disc
        best = max(best, end - 1 - i)
    return best


def goal_corner(config: ArenaConfig) -> int:
    L = config.arena_side
    corners = np.array([[0, 0], [L, 0], [L, L], [0, L]], dtype=float)
    return int(np.argmin(np.hypot(*(corners - np.array(config.platform_center)).T)))


def extract_features(traj: Trajectory, config: ArenaConfig | None = None,
                     thresholds: Thresholds | None = None) -> TrajectoryFeatures:
    cfg = config or ArenaConfig()
    th = thresholds or Thresholds()
    xy = traj.poses[:, :2]
    L = cfg.arena_side
    c = L / 2
    theta = np.arctan2(xy[:, 1] - c, xy[:, 0] - c)
    dtheta = np.abs(wrap_angle(np.diff(theta)))
    sweep = float(np.sum(dtheta))
    # crossing near the center swings the polar angle without going around anything
    r = np.hypot(xy[:, 0] - c, xy[:, 1] - c)
    outer = (r[1:] >= th.loop_core_radius) & (r[:-1] >= th.loop_core_radius)
    outer_sweep = float(np.sum(dtheta[outer]))
    wd = np.minimum.reduce([xy[:, 0], L - xy[:, 0], xy[:, 1], L - xy[:, 1]])
    cv = float(wd.std() / wd.mean()) if wd.mean() > 1e-9 else 0.0

    corners = np.array([[0, 0], [L, 0], [L, L], [0, L]], dtype=float)
    gc = goal_corner(cfg)
    dist = np.hypot(xy[:, None, 0] - corners[None, :, 0], xy[:, None, 1] - corners[None, :, 1])
    inside = dist <= th.corner_radius
    inside[:, gc] = False
    corner_hit, corner_eff, visited = False, 0.0, set()
    # count entries only: a start inside a corner disc is not a test of that corner
    entered = np.zeros_like(inside)
    entered[1:] = inside[1:] & ~inside[:-1]
    hits = np.flatnonzero(entered.any(axis=1))
    if len(hits):
        first = hits[0]
        corner_hit = True
        corner_eff = _efficiency(xy[:first + 1])
        visited = set(np.flatnonzero(entered.any(axis=0)).tolist())
    return TrajectoryFeatures(
        length=traj.length,
        success=bool(traj.reached_goal),
        path_efficiency=_efficiency(xy),
        angular_sweep=sweep,
        wall_dist_cv=cv,
        max_dwell=_max_dwell(xy, th.dwell_radius),
        corner_hit=corner_hit,
        corner_efficiency=corner_eff,
        corners_visited=len(visited),
        outer_sweep=outer_sweep,
    )


def classify(f: TrajectoryFeatures, thresholds: Thresholds | None = None) -> Strategy:
    """First matching rule wins; every feature set maps to exactly one class."""
    th = thresholds or Thresholds()
    if f.max_dwell >= th.stuck_dwell_frac * max(f.length, 1) and not (
            f.success and f.length <= th.stuck_fast_success):
        return Strategy.Stuck
    if f.angular_sweep >= th.circling_sweep and f.wall_dist_cv <= th.circling_cv:
        return Strategy.Circling
    if f.outer_sweep >= th.loop_sweep:
        return Strategy.Circling
    if f.success and f.corner_hit:
        if f.corners_visited > th.max_corner_tests:
            return Strategy.Circling
        if f.corner_efficiency >= th.corner_efficiency:
            return Strategy.CornerTest
    if f.success and f.path_efficiency >= th.direct_efficiency:
        return Strategy.Direct
    if f.success:
        return Strategy.Indirect
    return Strategy.Circling if f.angular_sweep >= th.fallback_sweep else Strategy.Stuck


def classify_trajectory(traj: Trajectory, config: ArenaConfig | None = None,
                        thresholds: Thresholds | None = None) -> Strategy:
    return classify(extract_features(traj, config, thresholds), thresholds)


# rendering ------------------------------------------------------------------

IMAGE_SIZE = 224
_MARGIN = 8
DWELL_SATURATION = 50


def dwell_color(k: int) -> tuple[int, int, int]:
    """White at 0 steps of dwell, ramping to pure red at ``DWELL_SATURATION``."""
    g = round(255 * (1 - min(k, DWELL_SATURATION) / DWELL_SATURATION))
    return (255, g, g)


def _dwell_counts(traj: Trajectory) -> np.ndarray:
    """Consecutive steps spent at each pose without moving forward."""
    xy = traj.poses[:, :2]
    counts = np.zeros(len(xy), dtype=int)
    for i in range(1, len(xy)):
        moved = np.hypot(*(xy[i] - xy[i - 1])) > 1e-9
        counts[i] = 0 if moved else counts[i - 1] + 1
    return counts


def render_trajectory_image(traj: Trajectory, config: ArenaConfig | None = None, path=None,
                            size: int = IMAGE_SIZE):
    """Draw the trajectory as a ``size`` x ``size`` RGB image, optionally saved as PNG."""
    from PIL import Image, ImageDraw

    cfg = config or ArenaConfig()
    img = Image.new("RGB", (size, size), (40, 40, 40))
    draw = ImageDraw.Draw(img)
    scale = (size - 2 * _MARGIN) / cfg.arena_side

    def px(x, y):
        return (_MARGIN + x * scale, size - _MARGIN - y * scale)

    draw.rectangle([px(0, cfg.arena_side), px(cfg.arena_side, 0)], outline=(160, 160, 160))
    x0, y0, x1, y1 = cfg.platform_rect
    draw.rectangle([px(x0, y1), px(x1, y0)], fill=(90, 90, 90))
    counts = _dwell_counts(traj)
    r = 3.0

    def triangle(pose, color):
        cx, cy = px(pose[0], pose[1])
        # snap to whole pixels so sub-unit jitter rarely moves a marker
        cx, cy = round(cx), round(cy)
        h = pose[2]
        pts = [(cx + r * math.cos(h + o), cy - r * math.sin(h + o)) for o in (0.0, 2.4, -2.4)]
        draw.polygon([(round(a), round(b)) for a, b in pts], fill=color)

    for i in range(1, len(traj.poses)):
        triangle(traj.poses[i], dwell_color(counts[i]))
    triangle(traj.poses[0], (0, 200, 0))
    if traj.reached_goal:
        triangle(traj.poses[-1], (0, 220, 220))
    if path is not None:
        img.save(path, format="PNG")
    return img


# synthetic suite --------------------------------------------------------------

def _walk(points: np.ndarray, step: float = 10.0) -> np.ndarray:
    """Poses moving in ``step`` increments through the waypoints, with turn-in-place steps."""
    out = [np.array([points[0][0], points[0][1], points[0][2] if len(points[0]) > 2 else 0.0])]
    for p in points[1:]:
        cur = out[-1]
        target = math.atan2(p[1] - cur[1], p[0] - cur[0])
        diff = float(wrap_angle(target - cur[2]))
        while abs(diff) > 0.2:  # turn in place
            cur = np.array([cur[0], cur[1], float(wrap_angle(cur[2] + 0.2 * np.sign(diff)))])
            out.append(cur)
            diff = float(wrap_angle(target - cur[2]))
        cur = np.array([cur[0], cur[1], target])
        d = math.hypot(p[0] - cur[0], p[1] - cur[1])
        n = max(1, int(math.ceil(d / step)))
        for k in range(1, n + 1):
            f = k / n
            out.append(np.array([cur[0] + f * (p[0] - cur[0]), cur[1] + f * (p[1] - cur[1]), target]))
    return np.array(out)


def _finish(poses: np.ndarray, config: ArenaConfig, goal_allowed: bool = True) -> Trajectory:
    poses = poses[: config.max_steps + 1].copy()
    poses[:, :2] = np.clip(poses[:, :2], 0, config.arena_side)
    hit = np.flatnonzero(in_platform(poses[1:, 0], poses[1:, 1], config))
    if goal_allowed and len(hit):
        poses = poses[: hit[0] + 2]
        return Trajectory(poses, np.full(len(poses) - 1, 2), True)
    return Trajectory(poses, np.full(len(poses) - 1, 2), False)


def synthetic_trajectory(kind: Strategy, rng: np.random.Generator, config: ArenaConfig | None = None) -> Trajectory:
    """A randomized example trajectory of the given strategy class."""
    cfg = config or ArenaConfig()
    L = cfg.arena_side
    goal = np.array(cfg.platform_center)
    start = sample_initial_poses(rng, cfg, 1)[0]
    kind = Strategy(kind)
    if kind is Strategy.Direct:
        return _finish(_walk([start, goal + rng.uniform(-5, 5, 2)]), cfg)
    if kind is Strategy.Indirect:
        while True:
            s = sample_initial_poses(rng, cfg, 1)[0]
            mid = (s[:2] + goal) / 2
            perp = np.array([-(goal - s[:2])[1], (goal - s[:2])[0]])
            perp /= np.linalg.norm(perp)
            dist = np.linalg.norm(goal - s[:2])
            wp1 = mid + perp * rng.uniform(0.7, 1.0) * dist * rng.choice([-1, 1])
            wp2 = mid - perp * rng.uniform(0.2, 0.5) * dist * np.sign(perp @ (wp1 - mid))
            pts = np.clip(np.array([wp1, wp2]), 70, L - 70)
            t = _finish(_walk([s, pts[0], pts[1], goal]), cfg)
            f = extract_features(t, cfg)
            if (t.reached_goal and f.path_efficiency < 0.6 and not f.corner_hit
                    and f.angular_sweep < 1.4 * math.pi and f.max_dwell < 0.4 * t.length):
                return t
    if kind is Strategy.CornerTest:
        gc = goal_corner(cfg)
        corners = np.array([[0, 0], [L, 0], [L, L], [0, L]], dtype=float)
        # nearest non-goal corner adjacent to the goal corner
        choices = [(gc + 1) % 4, (gc + 3) % 4]
        c = corners[choices[int(rng.integers(2))]]
        inset = c + np.sign(np.array([L / 2, L / 2]) - c) * rng.uniform(15, 30, 2)
        return _finish(_walk([start, inset, goal + rng.uniform(-5, 5, 2)]), cfg)
    if kind is Strategy.Circling:
        c = np.array([L / 2, L / 2])
        radius = rng.uniform(80, 125)
        phase = rng.uniform(-math.pi, math.pi)
        direction = rng.choice([-1.0, 1.0])
        n = cfg.max_steps + 1
        ang = phase + direction * np.arange(n) * (10.0 / radius)
        pts = np.stack([c[0] + radius * np.cos(ang), c[1] + radius * np.sin(ang),
                        wrap_angle(ang + direction * math.pi / 2)], axis=1)
        return _finish(pts, cfg, goal_allowed=True)
    # Stuck: turning in place or pinned against a wall after a short run
    if rng.random() < 0.5:
        n = cfg.max_steps
        h = start[2] + 0.2 * np.arange(n + 1) * rng.choice([-1, 1])
        poses = np.column_stack([np.full(n + 1, start[0]), np.full(n + 1, start[1]), wrap_angle(h)])
        return Trajectory(poses, np.zeros(n, dtype=int), False)
    wall_pt = start[:2] + 400 * np.array([math.cos(start[2]), math.sin(start[2])])
    poses = _walk([start, wall_pt])
    poses[:, :2] = np.clip(poses[:, :2], 0, L)
    pad = np.repeat(poses[-1:], cfg.max_steps + 1, axis=0)
    poses = np.concatenate([poses, pad])[: cfg.max_steps + 1]
    return _finish(poses, cfg, goal_allowed=False)


def synthetic_suite(n_per_class: int, seed: int = 0, config: ArenaConfig | None = None):
    rng = np.random.default_rng(seed)
    out = []
    for kind in STRATEGIES:
        for _ in range(n_per_class):
            out.append((kind, synthetic_trajectory(kind, rng, config)))
    return out


# distributions across checkpoints ---------------------------------------------

def make_eval_poses(seed: int, config: ArenaConfig, n: int = 100) -> np.ndarray:
    return sample_initial_poses(np.random.default_rng(seed), config, n)


def save_eval_poses(path, poses: np.ndarray) -> None:
    Path(path).write_text(json.dumps({"poses": np.asarray(poses).tolist()}, indent=1))


def load_eval_poses(path) -> np.ndarray:
    return np.asarray(json.loads(Path(path).read_text())["poses"], dtype=float)


def strategy_fractions(strategies) -> dict:
    n = len(strategies)
    out = {s.value: (sum(1 for x in strategies if x is s) / n if n else 0.0) for s in STRATEGIES}
    out["spatial"] = sum(out[s.value] for s in STRATEGIES if s.spatial)
    out["non_spatial"] = 1.0 - out["spatial"] if n else 0.0
    return out


def evaluate_checkpoint(params: ParamSet, arena_config: ArenaConfig, eval_poses,
                        thresholds: Thresholds | None = None):
    """Greedy trajectories, their classes and class fractions for one checkpoint."""
    trajs = record_trajectories(params, arena_config, eval_poses)
    classes = [classify_trajectory(t, arena_config, thresholds) for t in trajs]
    return trajs, classes, strategy_fractions(classes)


def thresholds_from_dict(d: dict | None) -> Thresholds:
    th = Thresholds()
    for k, v in (d or {}).items():
        if not hasattr(th, k):
            raise ValueError(f"unknown classifier threshold {k!r}")
        setattr(th, k, type(getattr(th, k))(v))
    return th


def thresholds_to_dict(th: Thresholds) -> dict:
    return asdict(th)
