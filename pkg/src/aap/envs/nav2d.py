"""Continuous 2D room navigation with Move/Rotate/End actions.

Headings are compass-style: 0 deg faces +y and positive angles turn
clockwise, so ``Rotate(theta)`` adds ``theta`` to the heading.  The agent is
a disc; obstacles are axis-aligned rectangles, inflated by the agent radius
for collision checks.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import IO

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from ..drift import DriftSpec


@dataclass(frozen=True)
class NavAction:
    kind: str  # "move", "rotate" or "end"
    value: float = 0.0

    def __str__(self) -> str:
        if self.kind == "end":
            return "End"
        return f"{self.kind.capitalize()}({self.value:g})"


MOVE_DISTANCES = (0.05, 0.15, 0.25)
ROTATE_ANGLES = (0.0, 30.0, -30.0, 60.0, -60.0, 90.0, -90.0, 120.0, -120.0, 150.0, -150.0, 180.0)
ACTIONS: tuple[NavAction, ...] = (
    tuple(NavAction("move", d) for d in MOVE_DISTANCES)
    + tuple(NavAction("rotate", a) for a in ROTATE_ANGLES)
    + (NavAction("end"),)
)
N_ACTIONS = len(ACTIONS)
END_INDEX = N_ACTIONS - 1


def wrap_degrees(x: float) -> float:
    """Wrap an angle to (-180, 180]."""
    return x - 360.0 * math.ceil((x - 180.0) / 360.0)


@dataclass(frozen=True)
class NoiseSpec:
    sigma_d: float = 0.005
    sigma_theta: float = 0.5

    def __post_init__(self):
        if self.sigma_d < 0 or self.sigma_theta < 0:
            raise ValueError("noise scales must be nonnegative")


NO_NOISE = NoiseSpec(0.0, 0.0)


@dataclass(frozen=True)
class Nav2DConfig:
    room_size: float = 5.0
    min_obstacles: int = 3
    max_obstacles: int = 6
    min_side: float = 0.3
    max_side: float = 1.2
    agent_radius: float = 0.1
    grid_res: float = 0.05
    success_radius: float = 0.2
    step_cap: int = 500
    n_rays: int = 12
    ray_range: float = 2.0
    min_start_distance: float = 0.5
    placement_attempts: int = 100
    step_penalty: float = -0.01
    success_reward: float = 10.0


@dataclass
class Scene:
    """Room layout; obstacles are (x0, y0, x1, y1) rectangles."""

    size: float
    obstacles: np.ndarray
    seed: int = 0
    free: np.ndarray = field(default=None, repr=False)
    labels: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"room_size": self.size, "seed": self.seed, "obstacles": self.obstacles.tolist()}


def _truncated_normal(rng: np.random.Generator, sigma: float) -> float:
    if sigma == 0:
        return 0.0
    while True:
        x = rng.normal(0.0, sigma)
        if abs(x) <= 3 * sigma:
            return float(x)


def generate_scene(seed: int, cfg: Nav2DConfig) -> Scene:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(cfg.min_obstacles, cfg.max_obstacles + 1))
    obstacles = []
    for _ in range(n):
        w, h = rng.uniform(cfg.min_side, cfg.max_side, size=2)
        x0 = rng.uniform(0.0, cfg.room_size - w)
        y0 = rng.uniform(0.0, cfg.room_size - h)
        obstacles.append([x0, y0, x0 + w, y0 + h])
    scene = Scene(cfg.room_size, np.array(obstacles, dtype=np.float64), seed)
    _rasterize(scene, cfg)
    return scene


def _rasterize(scene: Scene, cfg: Nav2DConfig) -> None:
    n = int(round(scene.size / cfg.grid_res))
    centers = (np.arange(n) + 0.5) * cfg.grid_res
    X, Y = np.meshgrid(centers, centers, indexing="ij")
    r = cfg.agent_radius
    free = (X >= r) & (X <= scene.size - r) & (Y >= r) & (Y <= scene.size - r)
    for x0, y0, x1, y1 in scene.obstacles:
        free &= ~((X > x0 - r) & (X < x1 + r) & (Y > y0 - r) & (Y < y1 + r))
    scene.free = free
    scene.labels, _ = ndimage.label(free, structure=np.ones((3, 3), dtype=int))


def geodesic_field(scene: Scene, target_cell: tuple[int, int], res: float) -> np.ndarray:
    """8-connected shortest-path distance (meters) from every free cell to ``target_cell``."""
    free = scene.free
    n0, n1 = free.shape
    idx = -np.ones(free.shape, dtype=np.int64)
    idx[free] = np.arange(free.sum())
    rows, cols, weights = [], [], []
    for di, dj in ((0, 1), (1, 0), (1, 1), (1, -1)):
        a = idx[0:n0 - di, max(0, -dj):n1 - max(0, dj)]
        b = idx[di:n0, max(0, dj):n1 + min(0, dj)]
        ok = (a >= 0) & (b >= 0)
        w = res * (math.sqrt(2) if di and dj else 1.0)
        rows.append(a[ok])
        cols.append(b[ok])
        weights.append(np.full(ok.sum(), w))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    weights = np.concatenate(weights)
    m = int(free.sum())
    graph = coo_matrix((weights, (rows, cols)), shape=(m, m)).tocsr()
    dist = dijkstra(graph, directed=False, indices=int(idx[target_cell]))
    out = np.full(free.shape, np.inf)
    out[free] = dist
    return out


def _segment_hits(p: np.ndarray, u: np.ndarray, length: float, boxes: np.ndarray) -> float:
    """Distance along p + t*u (0 <= t <= length) to the first entry into any box."""
    best = length
    if len(boxes) == 0:
        return best
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(u != 0, 1.0 / np.where(u != 0, u, 1.0), np.inf)
        t1 = (boxes[:, :2] - p) * inv
        t2 = (boxes[:, 2:] - p) * inv
    # parallel axes: inside the slab -> (-inf, inf), outside -> empty
    for ax in range(2):
        if u[ax] == 0:
            inside = (p[ax] > boxes[:, ax]) & (p[ax] < boxes[:, ax + 2])
            t1[:, ax] = np.where(inside, -np.inf, np.inf)
            t2[:, ax] = np.where(inside, np.inf, -np.inf)
    t_near = np.minimum(t1, t2).max(axis=1)
    t_far = np.maximum(t1, t2).min(axis=1)
    hit = (t_near <= t_far) & (t_far > 0) & (t_near < best)
    if hit.any():
        best = float(max(0.0, t_near[hit].min()))
    return best


def _fan_hits(p: np.ndarray, us: np.ndarray, lengths: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """:func:`_segment_hits` for a fan of directions ``us`` (n, 2) at once."""
    if len(boxes) == 0:
        return lengths.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(us != 0, 1.0 / np.where(us != 0, us, 1.0), np.inf)[:, None, :]
        t1 = (boxes[None, :, :2] - p) * inv
        t2 = (boxes[None, :, 2:] - p) * inv
    for ax in range(2):
        flat = us[:, ax] == 0
        if flat.any():
            inside = (p[ax] > boxes[:, ax]) & (p[ax] < boxes[:, ax + 2])
            t1[flat, :, ax] = np.where(inside, -np.inf, np.inf)
            t2[flat, :, ax] = np.where(inside, np.inf, -np.inf)
    t_near = np.minimum(t1, t2).max(axis=2)
    t_far = np.maximum(t1, t2).min(axis=2)
    hit = (t_near <= t_far) & (t_far > 0) & (t_near < lengths[:, None])
    first = np.where(hit, t_near, np.inf).min(axis=1)
    return np.where(hit.any(axis=1), np.maximum(0.0, first), lengths)


def _ray_exit(p: np.ndarray, u: np.ndarray, lo: float, hi: float) -> float:
    t = np.inf
    for ax in range(2):
        if u[ax] > 0:
            t = min(t, (hi - p[ax]) / u[ax])
        elif u[ax] < 0:
            t = min(t, (lo - p[ax]) / u[ax])
    return max(0.0, t)


class Nav2DEnv:
    """Single navigation environment instance (not thread-shared)."""

    def __init__(self, config: Nav2DConfig | None = None, record_trace: bool = False):
        self.cfg = config or Nav2DConfig()
        self.obs_dim = 3 + self.cfg.n_rays
        self.n_actions = N_ACTIONS
        self.record_trace = record_trace
        self.scene: Scene | None = None
        self.drift = DriftSpec()
        self.noise = NoiseSpec()
        self.done = True
        self.rng = np.random.default_rng(0)
        self.x = self.y = self.heading = 0.0
        self.target = np.zeros(2)
        self.start_pose = (0.0, 0.0, 0.0)
        self.steps = 0
        self.collided = False
        self.disabled_use_count = 0
        self.path_length = 0.0
        self._geo = None
        self.trace: list[dict] = []

    # -- episode lifecycle ---------------------------------------------------
    def reset(self, scene_seed: int = 0, drift: DriftSpec | None = None,
              noise: NoiseSpec | None = None, episode_seed: int = 0) -> np.ndarray:
        self.drift = drift or DriftSpec()
        if END_INDEX in self.drift.disabled:
            raise ValueError("the End action cannot be disabled")
        self.noise = noise if noise is not None else NoiseSpec()
        self.rng = np.random.default_rng(episode_seed)
        cfg = self.cfg
        regen = 0
        while True:
            seed = scene_seed if regen == 0 else int(np.random.SeedSequence([scene_seed, regen]).generate_state(1)[0])
            scene = generate_scene(seed, cfg)
            placed = self._place(scene)
            if placed is not None:
                break
            regen += 1
        self.scene = scene
        (sx, sy), (tx, ty) = placed
        self.x, self.y = sx, sy
        self.heading = wrap_degrees(float(self.rng.uniform(-180.0, 180.0)))
        self.target = np.array([tx, ty])
        self.start_pose = (self.x, self.y, self.heading)
        self.steps = 0
        self.collided = False
        self.disabled_use_count = 0
        self.path_length = 0.0
        self.done = False
        self._geo = None
        self.trace = []
        self.start_distance = self.goal_distance()
        return self.observation()

    def _place(self, scene: Scene):
        cells = np.argwhere(scene.free)
        if len(cells) < 2:
            return None
        res = self.cfg.grid_res
        for _ in range(self.cfg.placement_attempts):
            a, b = self.rng.integers(len(cells), size=2)
            ca, cb = cells[a], cells[b]
            pa = (ca + 0.5) * res
            pb = (cb + 0.5) * res
            if np.hypot(*(pa - pb)) < self.cfg.min_start_distance:
                continue
            if scene.labels[tuple(ca)] != scene.labels[tuple(cb)]:
                continue
            return (float(pa[0]), float(pa[1])), (float(pb[0]), float(pb[1]))
        return None

    # -- geometry --------------------------------------------------------------
    def _inflated(self) -> np.ndarray:
        r = self.cfg.agent_radius
        obs = self.scene.obstacles
        return obs + np.array([-r, -r, r, r]) if len(obs) else obs

    def goal_distance(self) -> float:
        return float(math.hypot(self.target[0] - self.x, self.target[1] - self.y))

    def goal_bearing(self) -> float:
        dx, dy = self.target[0] - self.x, self.target[1] - self.y
        return wrap_degrees(math.degrees(math.atan2(dx, dy)) - self.heading)

    def rays(self) -> np.ndarray:
        n = self.cfg.n_rays
        p = np.array([self.x, self.y])
        angles = [math.radians(self.heading + 360.0 * k / n) for k in range(n)]
        us = np.array([[math.sin(a), math.cos(a)] for a in angles])
        reach = np.array([min(self.cfg.ray_range, _ray_exit(p, u, 0.0, self.scene.size)) for u in us])
        return _fan_hits(p, us, reach, self.scene.obstacles)

    def clearance(self) -> float:
        """Signed distance from the agent center to the nearest inflated obstacle or wall limit."""
        r = self.cfg.agent_radius
        s = self.scene.size
        d = min(self.x - r, s - r - self.x, self.y - r, s - r - self.y)
        for x0, y0, x1, y1 in self._inflated():
            dx = max(x0 - self.x, 0.0, self.x - x1)
            dy = max(y0 - self.y, 0.0, self.y - y1)
            if dx == 0 and dy == 0:
                inside = min(self.x - x0, x1 - self.x, self.y - y0, y1 - self.y)
                d = min(d, -inside)
            else:
                d = min(d, math.hypot(dx, dy))
        return d

    def observation(self) -> np.ndarray:
        return np.concatenate([[self.goal_distance(), self.goal_bearing()], self.rays(),
                               [1.0 if self.collided else 0.0]])

    # -- dynamics -----------------------------------------------------------
    def _translate(self, dist: float) -> float:
        """Move along the heading (backwards if ``dist`` < 0), stopping at first contact."""
        if dist == 0:
            self.collided = False
            return 0.0
        ang = math.radians(self.heading)
        u = np.array([math.sin(ang), math.cos(ang)]) * (1.0 if dist > 0 else -1.0)
        p = np.array([self.x, self.y])
        length = abs(dist)
        r = self.cfg.agent_radius
        t = min(length, _ray_exit(p, u, r, self.scene.size - r))
        t = _segment_hits(p, u, t, self._inflated())
        self.collided = bool(t < length)
        if self.collided:
            t = max(0.0, t - 1e-9)
        self.x += t * u[0]
        self.y += t * u[1]
        return t

    def step(self, action: int):
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action index {action} out of range")
        act = ACTIONS[action]
        prev_dist = self.goal_distance()
        prev = (self.x, self.y, self.heading)
        disabled = action in self.drift.disabled
        success = False
        moved = 0.0
        if disabled:
            self.disabled_use_count += 1
            self.collided = False
        elif act.kind == "move":
            n_d = _truncated_normal(self.rng, self.noise.sigma_d)
            moved = self._translate(act.value + self.drift.dm + n_d)
        elif act.kind == "rotate":
            n_t = _truncated_normal(self.rng, self.noise.sigma_theta)
            self.heading = wrap_degrees(self.heading + act.value + self.drift.dr + n_t)
            self.collided = False
        self.steps += 1
        self.path_length += moved
        if act.kind == "end":
            success = prev_dist <= self.cfg.success_radius
            self.done = True
        elif self.steps >= self.cfg.step_cap:
            self.done = True
        dist = self.goal_distance()
        reward = self.reward(prev_dist, dist, success)
        info = {
            "success": success,
            "distance": dist,
            "state_change": self.egocentric_change(prev),
            "state_change_valid": act.kind != "end",
            "collided": self.collided,
            "disabled_used": disabled,
            "disabled_use_count": self.disabled_use_count,
            "step": self.steps,
        }
        obs = self.observation()
        if self.record_trace:
            self.trace.append({
                "step": self.steps, "action": int(action), "action_name": str(act),
                "pose": [self.x, self.y, self.heading], "reward": reward,
                "collided": self.collided, "disabled": disabled,
            })
        return obs, reward, self.done, info

    def reward(self, prev_dist: float, dist: float, success: bool) -> float:
        return nav_reward(prev_dist, dist, success, self.cfg)

    def egocentric_change(self, prev: tuple[float, float, float]) -> np.ndarray:
        """(forward, lateral, heading-change in degrees) relative to the previous pose."""
        px, py, ph = prev
        dx, dy = self.x - px, self.y - py
        a = math.radians(ph)
        fwd = dx * math.sin(a) + dy * math.cos(a)
        lat = dx * math.cos(a) - dy * math.sin(a)
        return np.array([fwd, lat, wrap_degrees(self.heading - ph)])

    # -- evaluation helpers ---------------------------------------------------
    def _cell(self, x: float, y: float) -> tuple[int, int]:
        n = self.scene.free.shape[0]
        res = self.cfg.grid_res
        return (min(n - 1, max(0, int(x / res))), min(n - 1, max(0, int(y / res))))

    def _geodesic(self) -> np.ndarray:
        if self._geo is None:
            self._geo = geodesic_field(self.scene, self._cell(*self.target), self.cfg.grid_res)
        return self._geo

    def geodesic_distance(self, x: float | None = None, y: float | None = None) -> float:
        x = self.x if x is None else x
        y = self.y if y is None else y
        geo = self._geodesic()
        i, j = self._cell(x, y)
        best = np.inf
        res = self.cfg.grid_res
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                a, b = i + di, j + dj
                if 0 <= a < geo.shape[0] and 0 <= b < geo.shape[1] and np.isfinite(geo[a, b]):
                    c = (np.array([a, b]) + 0.5) * res
                    best = min(best, geo[a, b] + math.hypot(c[0] - x, c[1] - y))
        if not np.isfinite(best):
            return float(math.hypot(self.target[0] - x, self.target[1] - y))
        return float(best)

    def shortest_path_length(self) -> float:
        return max(self.geodesic_distance(*self.start_pose[:2]), 1e-6)

    # -- persistence -----------------------------------------------------------
    def scene_description(self) -> dict:
        d = self.scene.to_dict()
        d.update({
            "agent_radius": self.cfg.agent_radius,
            "start": list(self.start_pose),
            "target": self.target.tolist(),
        })
        return d

    def get_state(self) -> dict:
        return {
            "scene": self.scene.to_dict(), "drift": self.drift.to_dict(),
            "noise": asdict(self.noise), "rng": self.rng.bit_generator.state,
            "pose": [self.x, self.y, self.heading], "start_pose": list(self.start_pose),
            "target": self.target.tolist(), "steps": self.steps, "collided": bool(self.collided),
            "disabled_use_count": self.disabled_use_count, "path_length": self.path_length,
            "start_distance": self.start_distance, "done": bool(self.done),
        }

    def set_state(self, state: dict) -> None:
        sc = state["scene"]
        self.scene = Scene(sc["room_size"], np.array(sc["obstacles"], dtype=np.float64).reshape(-1, 4), sc["seed"])
        _rasterize(self.scene, self.cfg)
        self.drift = DriftSpec.from_dict(state["drift"])
        self.noise = NoiseSpec(**state["noise"])
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = state["rng"]
        self.x, self.y, self.heading = state["pose"]
        self.start_pose = tuple(state["start_pose"])
        self.target = np.array(state["target"], dtype=np.float64)
        self.steps = state["steps"]
        self.collided = state["collided"]
        self.disabled_use_count = state["disabled_use_count"]
        self.path_length = state["path_length"]
        self.start_distance = state["start_distance"]
        self.done = state["done"]
        self._geo = None
        self.trace = []

    def write_trace(self, fh: IO[str]) -> None:
        for rec in self.trace:
            fh.write(json.dumps(rec) + "\n")


def nav_reward(prev_dist: float, dist: float, success: bool, cfg: Nav2DConfig | None = None) -> float:
    """Step penalty + success bonus + decrease in goal distance."""
    cfg = cfg or Nav2DConfig()
    return cfg.step_penalty + (cfg.success_reward if success else 0.0) + (prev_dist - dist)
