"""Native environments: continuous MountainCar and PixelRacer.

PixelRacer is a procedural top-down driving task with pixel
observations, a 3-dim continuous action box (steer, accel, brake) and a
tile-visitation reward of -0.1 per frame plus 1000/N per newly visited
track tile. Kinematics are a simple bicycle model, not rigid-body
physics.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

MC_MIN_POS, MC_MAX_POS = -1.2, 0.5
MC_MAX_SPEED = 0.07
MC_GOAL = 0.45
MC_FORCE = 0.0015
MC_GRAVITY = 0.0025
MC_STEP_LIMIT = 999

RACER_STEP_LIMIT = 1000
RACER_TRACK_HALF_WIDTH = 0.06
RACER_CAMERA_HALF = 0.25
RACER_DT = 0.05
RACER_STEER_GAIN = 3.5
RACER_ACCEL_GAIN = 1.0
RACER_BRAKE_GAIN = 0.5
RACER_DRAG = 0.3
RACER_OFFTRACK_FRICTION = 0.92

COLOR_GRASS = np.array([0.2, 0.6, 0.2])
COLOR_TRACK = np.array([0.45, 0.45, 0.45])
COLOR_CAR = np.array([0.8, 0.1, 0.1])

_GRID_RES = 384
_GRID_EXTENT = 1.5  # world covers [-extent, extent]^2


@dataclass
class StepResult:
    next_observation: np.ndarray
    reward: float
    done: bool


@dataclass
class McState:
    position: float
    velocity: float
    step_count: int = 0


class MountainCar:
    """Continuous mountain car; episode ends at the goal or after 999 steps."""

    name = "mountaincar"
    action_dim = 1
    action_low = np.array([-1.0])
    action_high = np.array([1.0])
    observation_dim = 2

    def __init__(self):
        self.state = None

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        self.state = McState(position=rng.uniform(-0.6, -0.4), velocity=0.0)
        return self._obs()

    def _obs(self):
        return np.array([self.state.position, self.state.velocity])

    def step(self, action):
        a = float(np.asarray(action).reshape(-1)[0])
        if not math.isfinite(a):
            raise ValueError(f"non-finite action {a!r}")
        a = min(max(a, -1.0), 1.0)
        s = self.state
        v = s.velocity + MC_FORCE * a - MC_GRAVITY * math.cos(3.0 * s.position)
        v = min(max(v, -MC_MAX_SPEED), MC_MAX_SPEED)
        x = min(max(s.position + v, MC_MIN_POS), MC_MAX_POS)
        if x <= MC_MIN_POS and v < 0.0:
            v = 0.0
        s.position, s.velocity = x, v
        s.step_count += 1
        reached = x >= MC_GOAL
        reward = -(a * a) * 0.1 + (100.0 if reached else 0.0)
        done = reached or s.step_count >= MC_STEP_LIMIT
        return StepResult(self._obs(), reward, done)


def mc_step_values(position, velocity, action):
    """One transition of the mountain-car dynamics as plain numbers."""
    env = MountainCar()
    env.state = McState(position, velocity)
    res = env.step(action)
    return env.state.position, env.state.velocity, res.reward, res.done


@dataclass
class RacerState:
    x: float
    y: float
    heading: float
    speed: float
    centerline: np.ndarray  # tile endpoints, [N+1, 2] (closed: last == first)
    visited: np.ndarray  # bool per tile
    step_count: int = 0
    grid: np.ndarray = field(default=None, repr=False)  # uint8 occupancy, 1 = track

    @property
    def tile_count(self):
        return len(self.visited)


def _catmull_rom_closed(points, samples_per_segment):
    """Closed Catmull-Rom spline through the control points."""
    n = len(points)
    out = []
    ts = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)
    for i in range(n):
        p0 = points[(i - 1) % n]
        p1 = points[i]
        p2 = points[(i + 1) % n]
        p3 = points[(i + 2) % n]
        for t in ts:
            t2, t3 = t * t, t * t * t
            out.append(
                0.5
                * (
                    (2 * p1)
                    + (-p0 + p2) * t
                    + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t2
                    + (-p0 + 3 * p1 - 3 * p2 + p3) * t3
                )
            )
    return np.array(out)


def _segment_distances(points, a, b):
    """Distance from each point to segment ab (all vectorized)."""
    ab = b - a
    denom = float(ab @ ab) or 1e-12
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def _build_grid(centerline):
    lin = np.linspace(-_GRID_EXTENT, _GRID_EXTENT, _GRID_RES)
    xs, ys = np.meshgrid(lin, lin, indexing="xy")
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    dist = np.full(len(pts), np.inf)
    for i in range(len(centerline) - 1):
        dist = np.minimum(
            dist, _segment_distances(pts, centerline[i], centerline[i + 1])
        )
    return (dist <= RACER_TRACK_HALF_WIDTH).reshape(_GRID_RES, _GRID_RES).astype(
        np.uint8
    )


def generate_track(seed, n_control=12, samples_per_segment=10):
    """Closed-loop centerline through randomized control points."""
    rng = np.random.default_rng(seed)
    angles = (np.arange(n_control) + rng.uniform(-0.3, 0.3, n_control)) * (
        2.0 * math.pi / n_control
    )
    radii = rng.uniform(0.7, 1.25, n_control)
    control = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    center = _catmull_rom_closed(control, samples_per_segment)
    return np.concatenate([center, center[:1]], axis=0)


def render_obs(state, resolution=64):
    """Car-centered top-down RGB view, values in [0, 1]."""
    lin = np.linspace(-RACER_CAMERA_HALF, RACER_CAMERA_HALF, resolution)
    wx = state.x + lin
    wy = state.y + lin
    scale = (_GRID_RES - 1) / (2.0 * _GRID_EXTENT)
    ix = np.clip(((wx + _GRID_EXTENT) * scale).round().astype(int), 0, _GRID_RES - 1)
    iy = np.clip(((wy + _GRID_EXTENT) * scale).round().astype(int), 0, _GRID_RES - 1)
    # grid is indexed [row=y, col=x]; image row 0 is the top (max y)
    occ = state.grid[np.ix_(iy[::-1], ix)]
    img = np.where(occ[None, :, :] == 1, COLOR_TRACK[:, None, None], COLOR_GRASS[:, None, None])
    c = resolution // 2
    half = max(resolution // 32, 1)
    img[:, c - half : c + half, c - half : c + half] = COLOR_CAR[:, None, None]
    return img


@functools.lru_cache(maxsize=64)
def _track_and_grid(seed):
    """Track geometry is deterministic per seed, so cache it; both arrays
    are treated as read-only by the env."""
    centerline = generate_track(seed)
    return centerline, _build_grid(centerline)


class PixelRacer:
    """Procedural driving task; see module docstring for the contract."""

    name = "pixelracer"
    action_dim = 3
    action_low = np.array([-1.0, 0.0, 0.0])
    action_high = np.array([1.0, 1.0, 1.0])

    def __init__(self, resolution=64):
        self.resolution = resolution
        self.state = None

    @property
    def observation_shape(self):
        return (3, self.resolution, self.resolution)

    def reset(self, seed):
        centerline, grid = _track_and_grid(int(seed))
        start = centerline[0]
        direction = centerline[1] - centerline[0]
        heading = math.atan2(direction[1], direction[0])
        n_tiles = len(centerline) - 1
        self.state = RacerState(
            x=float(start[0]),
            y=float(start[1]),
            heading=heading,
            speed=0.0,
            centerline=centerline,
            visited=np.zeros(n_tiles, dtype=bool),
            grid=grid,
        )
        return render_obs(self.state, self.resolution)

    def _on_track(self):
        s = self.state
        scale = (_GRID_RES - 1) / (2.0 * _GRID_EXTENT)
        ix = int(np.clip(round((s.x + _GRID_EXTENT) * scale), 0, _GRID_RES - 1))
        iy = int(np.clip(round((s.y + _GRID_EXTENT) * scale), 0, _GRID_RES - 1))
        return bool(s.grid[iy, ix])

    def step(self, action):
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.shape != (3,):
            raise ValueError(f"racer action must have 3 components, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite action {a!r}")
        steer = min(max(float(a[0]), -1.0), 1.0)
        accel = min(max(float(a[1]), 0.0), 1.0)
        brake = min(max(float(a[2]), 0.0), 1.0)
        s = self.state

        s.heading += steer * RACER_STEER_GAIN * s.speed * RACER_DT
        s.speed += (
            accel * RACER_ACCEL_GAIN - brake * RACER_BRAKE_GAIN - RACER_DRAG * s.speed
        ) * RACER_DT
        s.speed = max(s.speed, 0.0)
        if not self._on_track():
            s.speed *= RACER_OFFTRACK_FRICTION
        s.x += s.speed * math.cos(s.heading) * RACER_DT
        s.y += s.speed * math.sin(s.heading) * RACER_DT
        s.step_count += 1

        pos = np.array([[s.x, s.y]])
        n = s.tile_count
        newly = 0
        for i in range(n):
            if s.visited[i]:
                continue
            d = _segment_distances(pos, s.centerline[i], s.centerline[i + 1])[0]
            if d <= RACER_TRACK_HALF_WIDTH:
                s.visited[i] = True
                newly += 1
        reward = -0.1 + (1000.0 / n) * newly
        done = bool(s.visited.all()) or s.step_count >= RACER_STEP_LIMIT
        return StepResult(render_obs(s, self.resolution), reward, done)


def make_env(name, resolution=64):
    if name == "mountaincar":
        return MountainCar()
    if name == "pixelracer":
        return PixelRacer(resolution=resolution)
    raise ValueError(f"unknown environment {name!r}; valid: mountaincar, pixelracer")
