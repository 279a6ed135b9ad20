"""Task adapters: environment construction and observation featurization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import nav2d, particle

TASK_NAMES = ("particle-pointnav", "particle-objectpush", "nav2d-pointnav")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    obs_dim: int
    feature_dim: int
    goal_dim: int
    n_actions: int
    special: tuple[int, ...]  # action indices with fixed semantics (End); always last
    delta_dim: int
    delta_scale: tuple[float, ...]

    @property
    def is_nav2d(self) -> bool:
        return self.name.startswith("nav2d")

    @property
    def n_regular(self) -> int:
        return self.n_actions - len(self.special)

    def features(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map raw observations (..., obs_dim) to (state features, goal) float32 arrays."""
        obs = np.asarray(obs, dtype=np.float64)
        if self.is_nav2d:
            rho = obs[..., :1]
            phi = np.radians(obs[..., 1:2])
            goal = np.concatenate([rho, np.sin(phi), np.cos(phi)], axis=-1)
            rays = obs[..., 2:-1] / nav2d.Nav2DConfig.ray_range
            feat = np.concatenate([goal, rays, obs[..., -1:]], axis=-1)
        else:
            feat = obs
            goal = obs[..., -2:]
        return feat.astype(np.float32), goal.astype(np.float32)

    def scale_delta(self, delta: np.ndarray) -> np.ndarray:
        return (np.asarray(delta) * np.asarray(self.delta_scale)).astype(np.float32)

    def make_env(self, record_trace: bool = False, **overrides):
        if self.is_nav2d:
            return nav2d.Nav2DEnv(nav2d.Nav2DConfig(**overrides), record_trace=record_trace)
        cfg = particle.ParticleConfig(**overrides)
        return particle.ParticleEnv(self.name.split("-", 1)[1], cfg, record_trace=record_trace)


def get_task(name: str) -> TaskSpec:
    if name == "particle-pointnav":
        return TaskSpec(name, 6, 6, 2, particle.N_ACTIONS, (), 4, (10.0, 10.0, 10.0, 10.0))
    if name == "particle-objectpush":
        return TaskSpec(name, 10, 10, 2, particle.N_ACTIONS, (), 4, (10.0, 10.0, 10.0, 10.0))
    if name == "nav2d-pointnav":
        n_rays = nav2d.Nav2DConfig.n_rays
        return TaskSpec(name, 3 + n_rays, 4 + n_rays, 3, nav2d.N_ACTIONS, (nav2d.END_INDEX,), 3,
                        (4.0, 4.0, 1.0 / 90.0))
    raise ValueError(f"unknown task {name!r}; expected one of {TASK_NAMES}")
