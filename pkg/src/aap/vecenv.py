"""Batches of auto-resetting environment slots.

Each slot owns its own random generator, so slot trajectories do not depend
on how slots are grouped into worker processes.  :class:`ParallelVecEnv`
spreads contiguous slot ranges over subprocesses and merges results in slot
order, which keeps training deterministic for any worker count.
"""
from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass

import numpy as np

from .drift import DriftRegime, sample_train
from .envs.nav2d import NoiseSpec
from .tasks import TaskSpec

# Nav2d scene seeds: training draws from [0, TRAIN_SCENES); evaluation uses a
# disjoint range starting at EVAL_SCENE_OFFSET.
TRAIN_SCENES = 10_000
EVAL_SCENE_OFFSET = 1_000_000


@dataclass
class StepBatch:
    obs: np.ndarray          # (B, obs_dim) next observations (reset observation where done)
    rewards: np.ndarray      # (B,)
    dones: np.ndarray        # (B,) bool
    deltas: np.ndarray       # (B, delta_dim) scaled ground-truth state change
    delta_valid: np.ndarray  # (B,) bool
    successes: np.ndarray    # (B,) bool, meaningful where done
    returns: np.ndarray      # (B,) episode return, meaningful where done
    lengths: np.ndarray      # (B,) episode length, meaningful where done


class VecEnv:
    """``n`` training slots for one task; slot ``i`` is seeded from ``(seed, i)``."""

    def __init__(self, task: TaskSpec, n: int, seed: int, regime: DriftRegime,
                 noise: NoiseSpec | None = None, env_overrides: dict | None = None,
                 first_slot: int = 0):
        self.task = task
        self.n = n
        self.regime = regime
        self.noise = noise if noise is not None else NoiseSpec()
        self.envs = [task.make_env(**(env_overrides or {})) for _ in range(n)]
        self.rngs = [np.random.default_rng(np.random.SeedSequence([seed, first_slot + i]))
                     for i in range(n)]
        self.ep_return = np.zeros(n)
        self.obs = np.zeros((n, task.obs_dim))

    def _reset_slot(self, i: int) -> np.ndarray:
        rng = self.rngs[i]
        drift = sample_train(self.regime, rng)
        ep_seed = int(rng.integers(2**31))
        env = self.envs[i]
        if self.task.is_nav2d:
            scene = int(rng.integers(TRAIN_SCENES))
            return env.reset(scene, drift, self.noise, ep_seed)
        return env.reset(drift, ep_seed)

    def reset(self) -> np.ndarray:
        self.obs = np.stack([self._reset_slot(i) for i in range(self.n)])
        self.ep_return[:] = 0
        return self.obs.copy()

    def step(self, actions: np.ndarray) -> StepBatch:
        t = self.task
        n = self.n
        out = StepBatch(np.zeros((n, t.obs_dim)), np.zeros(n), np.zeros(n, bool),
                        np.zeros((n, t.delta_dim), np.float32), np.zeros(n, bool),
                        np.zeros(n, bool), np.zeros(n), np.zeros(n, int))
        for i, env in enumerate(self.envs):
            obs, rew, done, info = env.step(int(actions[i]))
            out.rewards[i] = rew
            out.deltas[i] = t.scale_delta(info["state_change"])
            out.delta_valid[i] = info.get("state_change_valid", True)
            self.ep_return[i] += rew
            if done:
                out.dones[i] = True
                out.successes[i] = info["success"]
                out.returns[i] = self.ep_return[i]
                out.lengths[i] = info["step"]
                self.ep_return[i] = 0.0
                obs = self._reset_slot(i)
            out.obs[i] = obs
        self.obs = out.obs.copy()
        return out

    def get_state(self) -> dict:
        return {
            "envs": [e.get_state() for e in self.envs],
            "rngs": [r.bit_generator.state for r in self.rngs],
            "ep_return": self.ep_return.tolist(),
            "obs": self.obs.tolist(),
        }

    def set_state(self, state: dict) -> None:
        for env, s in zip(self.envs, state["envs"]):
            env.set_state(s)
        for rng, s in zip(self.rngs, state["rngs"]):
            rng.bit_generator.state = s
        self.ep_return = np.array(state["ep_return"], dtype=np.float64)
        self.obs = np.array(state["obs"], dtype=np.float64)

    def close(self) -> None:
        pass


def _worker(conn, args):
    venv = VecEnv(*args)
    while True:
        cmd, payload = conn.recv()
        if cmd == "reset":
            conn.send(venv.reset())
        elif cmd == "step":
            conn.send(venv.step(payload))
        elif cmd == "get_state":
            conn.send(venv.get_state())
        elif cmd == "set_state":
            venv.set_state(payload)
            conn.send(None)
        elif cmd == "close":
            conn.close()
            return


class ParallelVecEnv:
    """Same interface as :class:`VecEnv`, slots split across subprocesses."""

    def __init__(self, task: TaskSpec, n: int, seed: int, regime: DriftRegime,
                 noise: NoiseSpec | None = None, env_overrides: dict | None = None,
                 workers: int = 2):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.task, self.n = task, n
        bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
        ctx = mp.get_context("spawn")
        self.conns, self.procs, self.sizes = [], [], []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            parent, child = ctx.Pipe()
            args = (task, int(hi - lo), seed, regime, noise, env_overrides, int(lo))
            proc = ctx.Process(target=_worker, args=(child, args), daemon=True)
            proc.start()
            self.conns.append(parent)
            self.procs.append(proc)
            self.sizes.append(int(hi - lo))

    def _call(self, cmd, payloads=None):
        payloads = payloads or [None] * len(self.conns)
        for conn, p in zip(self.conns, payloads):
            conn.send((cmd, p))
        return [conn.recv() for conn in self.conns]

    def _split(self, arr):
        cuts = np.cumsum(self.sizes)[:-1]
        return np.split(np.asarray(arr), cuts)

    def reset(self) -> np.ndarray:
        return np.concatenate(self._call("reset"))

    def step(self, actions: np.ndarray) -> StepBatch:
        parts = self._call("step", self._split(actions))
        return StepBatch(*[np.concatenate([getattr(p, f) for p in parts])
                           for f in StepBatch.__dataclass_fields__])

    def get_state(self) -> dict:
        parts = self._call("get_state")
        merged = {k: sum((p[k] for p in parts), []) for k in ("envs", "rngs", "ep_return", "obs")}
        return merged

    def set_state(self, state: dict) -> None:
        cuts = np.cumsum([0] + self.sizes)
        payloads = [{k: state[k][lo:hi] for k in state} for lo, hi in zip(cuts[:-1], cuts[1:])]
        self._call("set_state", payloads)

    def close(self) -> None:
        for conn in self.conns:
            conn.send(("close", None))
        for proc in self.procs:
            proc.join(timeout=5)


def make_vec_env(task: TaskSpec, n: int, seed: int, regime: DriftRegime,
                 noise: NoiseSpec | None = None, env_overrides: dict | None = None,
                 workers: int = 1):
    if workers <= 1:
        return VecEnv(task, n, seed, regime, noise, env_overrides)
    return ParallelVecEnv(task, n, seed, regime, noise, env_overrides, workers)
