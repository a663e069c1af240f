"""2D water-maze arena: cue variants, raycast observations and episode dynamics.

Coordinates: origin at the south-west corner, x east, y north, heading
counter-clockwise from +x, wrapped into (-pi, pi].
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class Variant(str, enum.Enum):
    FourWallColors = "FourWallColors"
    TwoAsymWallColors = "TwoAsymWallColors"
    TwoSymWallColors = "TwoSymWallColors"
    OneWallColor = "OneWallColor"
    NorthPoster = "NorthPoster"
    EastPoster = "EastPoster"
    WestPoster = "WestPoster"


class Action(enum.IntEnum):
    Left = 0
    Right = 1
    Forward = 2
    NoOp = 3


# wall ids
EAST, NORTH, WEST, SOUTH = 0, 1, 2, 3
WALL_NAMES = ("E", "N", "W", "S")
POSTER_CODE = 5
N_COLOR_CODES = 5

# base wall colors, indexed by wall id (E, N, W, S)
_WALL_COLORS = {
    Variant.FourWallColors: (1, 2, 3, 4),
    Variant.TwoAsymWallColors: (1, 1, 2, 2),
    Variant.TwoSymWallColors: (1, 2, 1, 2),
    Variant.OneWallColor: (1, 1, 1, 1),
    Variant.NorthPoster: (1, 1, 1, 1),
    Variant.EastPoster: (1, 1, 1, 1),
    Variant.WestPoster: (1, 1, 1, 1),
}
_POSTER_WALL = {
    Variant.NorthPoster: NORTH,
    Variant.EastPoster: EAST,
    Variant.WestPoster: WEST,
}


class ConfigError(ValueError):
    """Invalid configuration or argument."""


class EpisodeFinishedError(RuntimeError):
    """Raised when stepping an environment whose episode already ended."""


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(a, dtype=float), 2 * math.pi)


@dataclass(frozen=True)
class ArenaConfig:
    variant: Variant = Variant.NorthPoster
    arena_side: float = 300.0
    platform_center: tuple[float, float] = (250.0, 50.0)
    platform_side: float = 20.0
    max_steps: int = 200
    move_dist: float = 10.0
    turn_angle: float = 0.2
    fov: float = 1.0
    n_rays: int = 12
    min_start_goal_dist: float = 50.0
    min_start_wall_dist: float = 30.0
    poster_width: float = 60.0
    poster_center: float = 150.0  # coordinate along the host wall

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "platform_center", tuple(float(c) for c in self.platform_center))
        L, half = self.arena_side, self.platform_side / 2
        cx, cy = self.platform_center
        if not (0 <= cx - half and cx + half <= L and 0 <= cy - half and cy + half <= L):
            raise ConfigError("platform must lie fully inside the arena")
        if self.n_rays < 2 or self.fov <= 0:
            raise ConfigError("need n_rays >= 2 and fov > 0")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be positive")
        if self.variant in _POSTER_WALL:
            lo = self.poster_center - self.poster_width / 2
            hi = self.poster_center + self.poster_width / 2
            if lo < 0 or hi > L or self.poster_width <= 0:
                raise ConfigError("poster segment must lie on its host wall")

    @property
    def platform_rect(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the platform."""
        h = self.platform_side / 2
        cx, cy = self.platform_center
        return (cx - h, cy - h, cx + h, cy + h)

    @property
    def diagonal(self) -> float:
        return self.arena_side * math.sqrt(2.0)

    @property
    def goal_dist_max(self) -> float:
        """Distance from platform center to the farthest arena corner."""
        L = self.arena_side
        cx, cy = self.platform_center
        return max(math.hypot(px - cx, py - cy) for px in (0.0, L) for py in (0.0, L))

    @property
    def ray_offsets(self) -> np.ndarray:
        return np.linspace(-self.fov / 2, self.fov / 2, self.n_rays)

    @property
    def obs_dim(self) -> int:
        return 2 * self.n_rays

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["variant"] = self.variant.value
        d["platform_center"] = list(self.platform_center)
        return d


@dataclass
class Pose:
    x: float
    y: float
    heading: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading])


def wall_color_at(variant, wall_id: int, point_on_wall: float, config: ArenaConfig | None = None) -> int:
    """Color code of ``wall_id`` at coordinate ``point_on_wall`` along that wall."""
    variant = Variant(variant)
    colors = _WALL_COLORS[variant]
    if variant in _POSTER_WALL and wall_id == _POSTER_WALL[variant]:
        cfg = config or ArenaConfig(variant=variant)
        if abs(point_on_wall - cfg.poster_center) <= cfg.poster_width / 2:
            return POSTER_CODE
    return colors[wall_id]


def raycast_arrays(x, y, heading, config: ArenaConfig):
    """Vectorized raycast.

    Returns ``(codes, dists)``, each of shape ``(n, n_rays)``: integer color
    codes and raw hit distances in arena units.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))[:, None]
    y = np.atleast_1d(np.asarray(y, dtype=float))[:, None]
    ang = np.atleast_1d(np.asarray(heading, dtype=float))[:, None] + config.ray_offsets[None, :]
    L = config.arena_side
    dx, dy = np.cos(ang), np.sin(ang)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (L - x) / dx, np.where(dx < 0, -x / dx, np.inf))
        ty = np.where(dy > 0, (L - y) / dy, np.where(dy < 0, -y / dy, np.inf))
    hit_x = tx <= ty
    t = np.where(hit_x, tx, ty)
    wall = np.where(hit_x, np.where(dx > 0, EAST, WEST), np.where(dy > 0, NORTH, SOUTH))
    colors = np.asarray(_WALL_COLORS[config.variant])
    codes = colors[wall]
    if config.variant in _POSTER_WALL:
        pw = _POSTER_WALL[config.variant]
        # coordinate along the wall: y for E/W walls, x for N/S walls
        along = np.where(hit_x, y + t * dy, x + t * dx)
        on_poster = (wall == pw) & (np.abs(along - config.poster_center) <= config.poster_width / 2)
        codes = np.where(on_poster, POSTER_CODE, codes)
    return codes, t


def encode_observation(codes, dists, config: ArenaConfig) -> np.ndarray:
    """Interleave normalized (color, distance) pairs into ``(n, 2*n_rays)``."""
    n = codes.shape[0]
    obs = np.empty((n, 2 * config.n_rays))
    obs[:, 0::2] = codes / N_COLOR_CODES
    obs[:, 1::2] = np.clip(dists / config.diagonal, 0.0, 1.0)
    return obs


def raycast(pose: Pose, config: ArenaConfig) -> np.ndarray:
    """Observation vector (length ``2*n_rays``) seen from ``pose``."""
    L = config.arena_side
    if not (0 <= pose.x <= L and 0 <= pose.y <= L):
        raise ConfigError(f"pose {pose} outside arena")
    codes, dists = raycast_arrays(pose.x, pose.y, pose.heading, config)
    return encode_observation(codes, dists, config)[0]


def in_platform(x, y, config: ArenaConfig):
    x0, y0, x1, y1 = config.platform_rect
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def admissible(x, y, config: ArenaConfig):
    """Whether start positions respect the wall margin and goal exclusion."""
    m, L = config.min_start_wall_dist, config.arena_side
    cx, cy = config.platform_center
    return (
        (x >= m) & (x <= L - m) & (y >= m) & (y <= L - m)
        & (np.hypot(x - cx, y - cy) >= config.min_start_goal_dist)
    )


def sample_initial_poses(rng: np.random.Generator, config: ArenaConfig, n: int) -> np.ndarray:
    """Rejection-sample ``n`` start poses as an ``(n, 3)`` array (x, y, heading)."""
    m, L = config.min_start_wall_dist, config.arena_side
    out = np.empty((n, 3))
    filled = 0
    while filled < n:
        k = n - filled
        xy = rng.uniform(m, L - m, size=(2 * k + 8, 2))
        ok = xy[admissible(xy[:, 0], xy[:, 1], config)][:k]
        out[filled:filled + len(ok), :2] = ok
        filled += len(ok)
    out[:, 2] = wrap_angle(rng.uniform(-math.pi, math.pi, size=n))
    return out


def sample_initial_pose(rng: np.random.Generator, config: ArenaConfig) -> Pose:
    x, y, h = sample_initial_poses(rng, config, 1)[0]
    return Pose(float(x), float(y), float(h))


CHUNK_GRID = 5


def chunk_index(x, y, config: ArenaConfig):
    """Id (0..24) of the 5x5 grid cell containing each position."""
    cell = config.arena_side / CHUNK_GRID
    ix = np.clip((np.asarray(x) // cell).astype(int), 0, CHUNK_GRID - 1)
    iy = np.clip((np.asarray(y) // cell).astype(int), 0, CHUNK_GRID - 1)
    return iy * CHUNK_GRID + ix


class VecArena:
    """``n`` independent arenas stepped in lockstep.

    With ``autoreset=True`` finished episodes restart immediately from a fresh
    random pose (training). Otherwise finished environments freeze and further
    actions on them are ignored (evaluation).
    """

    def __init__(self, config: ArenaConfig, n: int, rng: np.random.Generator | int | None = None,
                 autoreset: bool = True):
        self.config = config
        self.n = int(n)
        self.autoreset = autoreset
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.x = np.zeros(self.n)
        self.y = np.zeros(self.n)
        self.heading = np.zeros(self.n)
        self.step_index = np.zeros(self.n, dtype=int)
        self.visited = np.zeros((self.n, CHUNK_GRID * CHUNK_GRID), dtype=bool)
        self.finished = np.zeros(self.n, dtype=bool)

    # state views -----------------------------------------------------------
    @property
    def poses(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.heading], axis=1)

    def observe(self, idx=slice(None)) -> np.ndarray:
        codes, dists = raycast_arrays(self.x[idx], self.y[idx], self.heading[idx], self.config)
        return encode_observation(codes, dists, self.config)

    def _place(self, idx, poses):
        self.x[idx], self.y[idx], self.heading[idx] = poses[:, 0], poses[:, 1], wrap_angle(poses[:, 2])
        self.step_index[idx] = 0
        self.finished[idx] = False
        self.visited[idx] = False
        self.visited[idx, chunk_index(poses[:, 0], poses[:, 1], self.config)] = True

    def reset(self, poses: np.ndarray | None = None) -> np.ndarray:
        """Reset every environment, to random or given ``(n, 3)`` poses."""
        if poses is None:
            poses = sample_initial_poses(self.rng, self.config, self.n)
        else:
            poses = np.asarray(poses, dtype=float).reshape(self.n, 3)
            if not np.all(admissible(poses[:, 0], poses[:, 1], self.config)):
                raise ConfigError("fixed start pose outside the admissible region")
        self._place(np.arange(self.n), poses)
        return self.observe()

    def reset_unchecked(self, poses: np.ndarray) -> np.ndarray:
        """Reset to arbitrary in-arena poses (e.g. edge starts), skipping the start-region check."""
        poses = np.asarray(poses, dtype=float).reshape(self.n, 3)
        L = self.config.arena_side
        if np.any((poses[:, :2] < 0) | (poses[:, :2] > L)):
            raise ConfigError("pose outside arena")
        self._place(np.arange(self.n), poses)
        return self.observe()

    def step(self, actions):
        """Advance all environments by one action.

        Returns ``(obs, reward, done, info)``. ``info`` holds ``reached_goal``,
        ``truncated``, ``step_index`` (after the move), ``new_chunk`` and,
        with autoreset, ``terminal_obs`` / ``terminal_pose`` for envs that
        finished on this step (``obs`` already shows the fresh episode).
        """
        cfg = self.config
        actions = np.asarray(actions, dtype=int).reshape(self.n)
        if not self.autoreset and np.all(self.finished):
            raise EpisodeFinishedError("all episodes already finished")
        live = ~self.finished
        turn = np.where(actions == Action.Left, cfg.turn_angle,
                        np.where(actions == Action.Right, -cfg.turn_angle, 0.0))
        fwd = (actions == Action.Forward) & live
        self.heading = np.where(live, wrap_angle(self.heading + turn), self.heading)
        L = cfg.arena_side
        self.x = np.where(fwd, np.clip(self.x + cfg.move_dist * np.cos(self.heading), 0.0, L), self.x)
        self.y = np.where(fwd, np.clip(self.y + cfg.move_dist * np.sin(self.heading), 0.0, L), self.y)
        self.step_index = self.step_index + live

        chunk = chunk_index(self.x, self.y, cfg)
        rows = np.arange(self.n)
        new_chunk = live & ~self.visited[rows, chunk]
        self.visited[rows[live], chunk[live]] = True

        goal = live & in_platform(self.x, self.y, cfg)
        trunc = live & ~goal & (self.step_index >= cfg.max_steps)
        done = goal | trunc
        reward = goal.astype(float)
        info = {
            "reached_goal": goal,
            "truncated": trunc,
            "step_index": self.step_index.copy(),
            "new_chunk": new_chunk,
            "pose": self.poses,
            "live": live,
        }
        if self.autoreset:
            if np.any(done):
                idx = np.flatnonzero(done)
                info["terminal_obs"] = self.observe(idx)
                self._place(idx, sample_initial_poses(self.rng, cfg, len(idx)))
        else:
            self.finished |= done
        return self.observe(), reward, done, info


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class Arena:
    """Single-environment facade over :class:`VecArena`."""

    def __init__(self, config: ArenaConfig | None = None, rng: np.random.Generator | int | None = None):
        self.config = config or ArenaConfig()
        self._env = VecArena(self.config, 1, rng, autoreset=False)
        self._started = False

    @property
    def pose(self) -> Pose:
        e = self._env
        return Pose(float(e.x[0]), float(e.y[0]), float(e.heading[0]))

    @property
    def step_index(self) -> int:
        return int(self._env.step_index[0])

    @property
    def visited_chunks(self) -> set[int]:
        return set(np.flatnonzero(self._env.visited[0]).tolist())

    @property
    def done(self) -> bool:
        return bool(self._env.finished[0])

    def reset(self, pose: Pose | None = None, *, check: bool = True) -> np.ndarray:
        self._started = True
        if pose is None:
            return self._env.reset()[0]
        arr = np.array([[pose.x, pose.y, pose.heading]])
        return (self._env.reset(arr) if check else self._env.reset_unchecked(arr))[0]

    def step(self, action) -> StepResult:
        if not self._started or self.done:
            raise EpisodeFinishedError("reset() required before stepping")
        obs, r, d, info = self._env.step([int(action)])
        return StepResult(obs[0], float(r[0]), bool(d[0]),
                          {"reached_goal": bool(info["reached_goal"][0]),
                           "step_index": int(info["step_index"][0])})
