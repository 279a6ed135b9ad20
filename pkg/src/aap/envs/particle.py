"""Particle world: PointNav and ObjectPush with discrete acceleration actions.

The commanded acceleration of each action is rotated by the episode's
rotation drift before integration.  ObjectPush adds a ball that the agent
moves through a linear spring contact.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import IO

import numpy as np

from ..drift import DriftSpec

ACTION_MAGNITUDES = np.array(
    [[0.2, 0], [-0.2, 0], [0.5, 0], [-0.5, 0], [0.8, 0], [-0.8, 0],
     [0, 0.2], [0, -0.2], [0, 0.5], [0, -0.5], [0, 0.8], [0, -0.8]],
    dtype=np.float64,
)
N_ACTIONS = len(ACTION_MAGNITUDES)
TASKS = ("pointnav", "objectpush")


@dataclass(frozen=True)
class ParticleConfig:
    dt: float = 0.1
    damping: float = 0.25
    bound: float = 1.0
    success_radius: float = 0.1
    step_cap: int = 128
    agent_radius: float = 0.05
    ball_radius: float = 0.05
    contact_k: float = 30.0
    min_separation: float = 0.3
    step_penalty: float = -0.01
    success_reward: float = 10.0


def apply_drift_rotation(mag, dr_degrees: float) -> np.ndarray:
    """Rotate a commanded acceleration by ``dr`` degrees: [[c, s], [-s, c]] @ mag."""
    t = math.radians(dr_degrees)
    c, s = math.cos(t), math.sin(t)
    mx, my = float(mag[0]), float(mag[1])
    return np.array([c * mx + s * my, -s * mx + c * my])


def contact_force(p_agent: np.ndarray, p_ball: np.ndarray, d_min: float, k: float) -> np.ndarray:
    """Spring force on the agent (the ball receives the negative)."""
    sep = p_agent - p_ball
    dist = float(np.hypot(sep[0], sep[1]))
    if dist >= d_min:
        return np.zeros(2)
    if dist < 1e-12:
        direction = np.array([1.0, 0.0])
    else:
        direction = sep / dist
    return k * (d_min - dist) * direction


class ParticleEnv:
    """Single particle environment instance (not thread-shared)."""

    def __init__(self, task: str = "pointnav", config: ParticleConfig | None = None,
                 record_trace: bool = False):
        if task not in TASKS:
            raise ValueError(f"unknown particle task {task!r}; expected one of {TASKS}")
        self.task = task
        self.cfg = config or ParticleConfig()
        self.obs_dim = 6 if task == "pointnav" else 10
        self.n_actions = N_ACTIONS
        self.drift = DriftSpec()
        self.done = True
        self.steps = 0
        self.p = np.zeros(2)
        self.v = np.zeros(2)
        self.o = np.zeros(2)
        self.ov = np.zeros(2)
        self.target = np.zeros(2)
        self.path_length = 0.0
        self.start_distance = 0.0
        self.record_trace = record_trace
        self.trace: list[dict] = []

    # -- episode lifecycle -------------------------------------------------
    def reset(self, drift: DriftSpec | None = None, seed: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.drift = drift or DriftSpec()
        b = self.cfg.bound - self.cfg.agent_radius
        n = 2 if self.task == "pointnav" else 3
        for _ in range(1000):
            pts = rng.uniform(-b, b, size=(n, 2))
            gaps = [np.linalg.norm(pts[i] - pts[j]) for i in range(n) for j in range(i + 1, n)]
            if min(gaps) >= self.cfg.min_separation:
                break
        self.p = pts[0].copy()
        self.target = pts[1].copy()
        if self.task == "objectpush":
            self.o = pts[2].copy()
        else:
            self.o = np.zeros(2)
        self.v = np.zeros(2)
        self.ov = np.zeros(2)
        self.steps = 0
        self.done = False
        self.trace = []
        self.path_length = 0.0
        self.start_distance = self.task_distance()
        return self.observation()

    def reference_position(self) -> np.ndarray:
        """Position of the entity that must reach the target."""
        return self.p if self.task == "pointnav" else self.o

    def shortest_path_length(self) -> float:
        return self.start_distance

    def observation(self) -> np.ndarray:
        if self.task == "pointnav":
            return np.concatenate([self.p, self.v, self.target - self.p])
        return np.concatenate([self.p, self.v, self.o, self.ov, self.target - self.o])

    def task_distance(self) -> float:
        ref = self.p if self.task == "pointnav" else self.o
        return float(np.linalg.norm(self.target - ref))

    def agent_state(self) -> np.ndarray:
        return np.concatenate([self.p, self.v])

    def step(self, action: int):
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action index {action} out of range")
        cfg = self.cfg
        prev_dist = self.task_distance()
        prev_state = self.agent_state()
        prev_ref = self.reference_position().copy()
        accel = apply_drift_rotation(ACTION_MAGNITUDES[action], self.drift.dr)
        force = np.zeros(2)
        if self.task == "objectpush":
            force = contact_force(self.p, self.o, cfg.agent_radius + cfg.ball_radius, cfg.contact_k)
        self.v = self.v * (1 - cfg.damping) + (accel + force) * cfg.dt
        self.p, self.v = self._clamp(self.p + self.v * cfg.dt, self.v)
        if self.task == "objectpush":
            self.ov = self.ov * (1 - cfg.damping) - force * cfg.dt
            self.o, self.ov = self._clamp(self.o + self.ov * cfg.dt, self.ov)
        self.steps += 1
        self.path_length += float(np.linalg.norm(self.reference_position() - prev_ref))
        dist = self.task_distance()
        success = dist <= cfg.success_radius
        self.done = success or self.steps >= cfg.step_cap
        reward = cfg.step_penalty + (cfg.success_reward if success else 0.0) + (prev_dist - dist)
        delta = self.agent_state() - prev_state
        info = {
            "success": success,
            "distance": dist,
            "state_change": delta,
            "accel": accel,
            "step": self.steps,
            "disabled_used": False,
        }
        obs = self.observation()
        if self.record_trace:
            self.trace.append({
                "step": self.steps, "action": int(action), "accel": accel.tolist(),
                "state": obs.tolist(), "reward": reward,
            })
        return obs, reward, self.done, info

    def _clamp(self, x: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # a wall stops motion along the clamped axis
        b = self.cfg.bound - self.cfg.agent_radius
        clamped = np.clip(x, -b, b)
        return clamped, np.where(clamped != x, 0.0, v)

    # -- persistence ---------------------------------------------------------
    def get_state(self) -> dict:
        return {
            "task": self.task, "drift": self.drift.to_dict(), "done": bool(self.done), "steps": self.steps,
            "p": self.p.tolist(), "v": self.v.tolist(), "o": self.o.tolist(), "ov": self.ov.tolist(),
            "target": self.target.tolist(), "path_length": self.path_length,
            "start_distance": self.start_distance, "config": asdict(self.cfg),
        }

    def set_state(self, state: dict) -> None:
        self.drift = DriftSpec.from_dict(state["drift"])
        self.done = state["done"]
        self.steps = state["steps"]
        self.path_length = state["path_length"]
        self.start_distance = state["start_distance"]
        for key in ("p", "v", "o", "ov", "target"):
            setattr(self, key, np.array(state[key], dtype=np.float64))
        self.trace = []

    def write_trace(self, fh: IO[str]) -> None:
        """Write the current episode trace as JSON lines."""
        for rec in self.trace:
            fh.write(json.dumps(rec) + "\n")
