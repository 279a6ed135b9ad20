"""Drift-sweep evaluation and metrics (SR, SPL, soft-SPL, ADR, DAU)."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .drift import DriftCell
from .envs.nav2d import NoiseSpec
from .policy import ActionPolicy
from .tasks import TaskSpec
from .vecenv import EVAL_SCENE_OFFSET

METRICS = ("sr", "spl", "soft_spl", "ep_length", "reward", "final_distance", "adr", "dau")
SUMMARY_COLUMNS = ("drift_dm", "drift_dr", "seen", "n_seeds", "n_episodes") + tuple(
    f"{m}_{s}" for m in METRICS for s in ("mean", "std"))


@dataclass(frozen=True)
class EpisodeRecord:
    success: bool
    path_length: float
    shortest_path: float
    start_distance: float
    final_distance: float
    steps: int
    total_reward: float
    disabled_uses: int
    drift_dm: float
    drift_dr: float
    seen: bool
    seed: int
    episode: int

    def __post_init__(self):
        if self.path_length < 0:
            raise ValueError("path length must be >= 0")
        if self.shortest_path <= 0:
            raise ValueError("shortest path length must be > 0")

    @property
    def cell(self) -> tuple[float, float]:
        return (self.drift_dm, self.drift_dr)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _efficiency(r: EpisodeRecord) -> float:
    return r.shortest_path / max(r.path_length, r.shortest_path)


def spl(records) -> float:
    """Mean of S * L / max(P, L)."""
    records = list(records)
    if not records:
        raise ValueError("spl of an empty record set")
    return float(np.mean([float(r.success) * _efficiency(r) for r in records]))


def soft_spl(records) -> float:
    """Mean of clamp(1 - d_final / d_start, 0, 1) * L / max(P, L)."""
    records = list(records)
    if not records:
        raise ValueError("soft_spl of an empty record set")
    vals = []
    for r in records:
        if r.start_distance <= 0:
            raise ValueError("soft_spl needs a positive start distance")
        progress = min(max(1.0 - r.final_distance / r.start_distance, 0.0), 1.0)
        vals.append(progress * _efficiency(r))
    return float(np.mean(vals))


def adr_dau(records) -> tuple[float, float]:
    """(fraction of episodes with at most one disabled-action use, mean use count)."""
    records = list(records)
    if not records:
        raise ValueError("adr_dau of an empty record set")
    uses = np.array([r.disabled_uses for r in records], dtype=float)
    return float(np.mean(uses <= 1)), float(np.mean(uses))


def episode_metrics(records) -> dict[str, float]:
    records = list(records)
    adr, dau = adr_dau(records)
    return {
        "sr": float(np.mean([r.success for r in records])),
        "spl": spl(records),
        "soft_spl": soft_spl(records),
        "ep_length": float(np.mean([r.steps for r in records])),
        "reward": float(np.mean([r.total_reward for r in records])),
        "final_distance": float(np.mean([r.final_distance for r in records])),
        "adr": adr,
        "dau": dau,
    }


@dataclass
class MetricsSummary:
    """Per-cell metrics: computed per training seed, then mean and std (ddof=0) over seeds."""

    cells: list[dict]

    def cell(self, dm: float, dr: float) -> dict:
        for c in self.cells:
            if np.isclose(c["drift_dm"], dm) and np.isclose(c["drift_dr"], dr):
                return c
        raise KeyError(f"no cell ({dm}, {dr}) in summary")

    def rows(self) -> list[tuple]:
        """Long form: one (dm, dr, metric, mean, std) row per cell and metric."""
        return [(c["drift_dm"], c["drift_dr"], m, c[f"{m}_mean"], c[f"{m}_std"])
                for c in self.cells for m in METRICS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for c in self.cells:
            w.writerow([format_value(c[k]) for k in SUMMARY_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsSummary":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ValueError("summary columns do not match the expected layout")
        cells = []
        for row in reader:
            c = {k: float(v) for k, v in row.items()}
            c["seen"] = bool(int(c["seen"]))
            c["n_seeds"] = int(c["n_seeds"])
            c["n_episodes"] = int(c["n_episodes"])
            cells.append(c)
        return cls(cells)


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def summarize(records, cells: list[DriftCell] | None = None) -> MetricsSummary:
    """Aggregate records by drift cell (in ``cells`` order if given, else first-seen order).

    A requested cell without any records is an error.
    """
    records = list(records)
    groups: dict[tuple[float, float], list[EpisodeRecord]] = {}
    for r in records:
        groups.setdefault(r.cell, []).append(r)
    keys = [c.key for c in cells] if cells is not None else list(groups)
    if not keys:
        raise ValueError("nothing to summarize")
    out = []
    for key in keys:
        recs = groups.get(key)
        if not recs:
            raise ValueError(f"drift cell {key} has no episodes")
        by_seed: dict[int, list[EpisodeRecord]] = {}
        for r in recs:
            by_seed.setdefault(r.seed, []).append(r)
        per_seed = [episode_metrics(by_seed[s]) for s in sorted(by_seed)]
        row = {"drift_dm": key[0], "drift_dr": key[1], "seen": recs[0].seen,
               "n_seeds": len(per_seed), "n_episodes": len(recs)}
        for m in METRICS:
            vals = np.array([p[m] for p in per_seed])
            row[f"{m}_mean"] = float(vals.mean())
            row[f"{m}_std"] = float(vals.std())
        out.append(row)
    return MetricsSummary(out)


def episode_seed(base: int, cell_index: int, episode: int) -> int:
    return int(np.random.SeedSequence([base, cell_index, episode]).generate_state(1)[0])


def run_eval(policy: ActionPolicy, task: TaskSpec, cells: list[DriftCell], episodes: int,
             seed: int, eval_seed: int = 20_000, batch: int = 50,
             noise: NoiseSpec | None = None, env_overrides: dict | None = None) -> list[EpisodeRecord]:
    """Greedy evaluation, ``episodes`` per cell.

    Episode ``k`` of cell ``c`` is seeded from ``(eval_seed, c, k)`` only,
    so every policy meets the same starts, targets and scenes.  ``seed``
    labels the records with the training seed of ``policy``.
    """
    records = []
    noise = noise if noise is not None else NoiseSpec()
    for ci, cell in enumerate(cells):
        for lo in range(0, episodes, batch):
            ks = list(range(lo, min(lo + batch, episodes)))
            records.extend(_run_batch(policy, task, cell, ci, ks, seed, eval_seed, noise,
                                      env_overrides or {}))
    return records


def _run_batch(policy, task, cell, ci, ks, seed, eval_seed, noise, overrides):
    n = len(ks)
    envs = [task.make_env(**overrides) for _ in range(n)]
    obs = np.zeros((n, task.obs_dim))
    for j, k in enumerate(ks):
        s = episode_seed(eval_seed, ci, k)
        if task.is_nav2d:
            scene = EVAL_SCENE_OFFSET + int(np.random.SeedSequence([eval_seed, k]).generate_state(1)[0] % 10**6)
            obs[j] = envs[j].reset(scene, cell.drift, noise, s)
        else:
            obs[j] = envs[j].reset(cell.drift, s)
    shortest = [e.shortest_path_length() for e in envs]
    start_d = [e.start_distance for e in envs]
    state = policy.initial_state(n)
    prev = np.full(n, -1, np.int64)
    start = np.ones(n, bool)
    active = np.ones(n, bool)
    total = np.zeros(n)
    final = {}
    with dc.no_grad():
        while active.any():
            out = policy.policy_step(obs, prev, start, state)
            state = out.state
            actions = out.logits.data.argmax(axis=-1)
            for j in np.flatnonzero(active):
                o, rew, done, info = envs[j].step(int(actions[j]))
                obs[j] = o
                total[j] += rew
                if done:
                    active[j] = False
                    final[j] = info
            prev = actions
            start = np.zeros(n, bool)
    recs = []
    for j, k in enumerate(ks):
        env, info = envs[j], final[j]
        ref_final = info["distance"] if not task.is_nav2d else env.goal_distance()
        recs.append(EpisodeRecord(
            success=bool(info["success"]), path_length=float(env.path_length),
            shortest_path=max(float(shortest[j]), 1e-9), start_distance=float(start_d[j]),
            final_distance=float(ref_final), steps=int(info["step"]), total_reward=float(total[j]),
            disabled_uses=int(getattr(env, "disabled_use_count", 0)),
            drift_dm=cell.drift.dm, drift_dr=cell.drift.dr, seen=cell.seen, seed=seed, episode=k))
    return recs


def write_records(path: str | Path, records) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records))


def read_records(path: str | Path) -> list[EpisodeRecord]:
    return [EpisodeRecord(**json.loads(ln)) for ln in Path(path).read_text().splitlines() if ln]
