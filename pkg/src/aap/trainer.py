"""PPO with a forward-prediction auxiliary loss for recurrent action policies."""
from __future__ import annotations

import json
import math
import sys
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import IO, TYPE_CHECKING

import numpy as np

from . import checkpoint as ckpt_io
from . import diffcore as dc
from .diffcore import NonFiniteError
from .policy import ActionPolicy, log_prob_of, sample_actions, slice_state
from .vecenv import StepBatch, make_vec_env

if TYPE_CHECKING:
    from .config import RunConfig


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.1
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    forward_coef: float = 1.0
    lr: float = 1e-3
    total_steps: int = 2_000_000
    rollout_length: int = 200
    n_envs: int = 32
    epochs: int = 4
    minibatches: int = 4
    max_grad_norm: float = 0.5
    checkpoint_every: int = 100_000
    normalize_advantages: bool = True

    def __post_init__(self):
        checks = [
            ("gamma", 0 <= self.gamma <= 1, "in [0, 1]"),
            ("gae_lambda", 0 <= self.gae_lambda <= 1, "in [0, 1]"),
            ("clip", self.clip > 0, "> 0"),
            ("forward_coef", self.forward_coef >= 0, ">= 0"),
            ("value_coef", self.value_coef >= 0, ">= 0"),
            ("entropy_coef", self.entropy_coef >= 0, ">= 0"),
            ("lr", self.lr >= 0, ">= 0"),
            ("total_steps", self.total_steps > 0, "> 0"),
            ("rollout_length", self.rollout_length > 0, "> 0"),
            ("n_envs", self.n_envs > 0, "> 0"),
            ("epochs", self.epochs > 0, "> 0"),
            ("minibatches", 0 < self.minibatches <= self.n_envs, "in [1, n_envs]"),
            ("max_grad_norm", self.max_grad_norm > 0, "> 0"),
            ("checkpoint_every", self.checkpoint_every > 0, "> 0"),
        ]
        for name, ok, want in checks:
            if not ok:
                raise ValueError(f"train.{name} must be {want}, got {getattr(self, name)}")


@dataclass
class RolloutBuffer:
    obs: np.ndarray           # (M, B, obs_dim)
    prev_actions: np.ndarray  # (M, B) action executed before obs[t]; -1 at episode start
    starts: np.ndarray        # (M, B) obs[t] is the first of an episode
    actions: np.ndarray       # (M, B)
    log_probs: np.ndarray     # (M, B)
    values: np.ndarray        # (M, B)
    rewards: np.ndarray       # (M, B)
    dones: np.ndarray         # (M, B)
    deltas: np.ndarray        # (M, B, delta_dim) scaled ground-truth state change of actions[t]
    delta_mask: np.ndarray    # (M, B) 1 where deltas supervise the forward head
    init_state: dict          # recurrent state before obs[0], batch-first
    bootstrap: np.ndarray     # (B,) value of the observation after the last step

    @property
    def length(self) -> int:
        return self.obs.shape[0]


def lr_schedule(step: int, total: int, lr0: float) -> float:
    """Linear decay from ``lr0`` at step 0 to 0 at ``total``."""
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr0 * (1.0 - step / total)


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                bootstrap: np.ndarray, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and value targets (advantages + values) along axis 0.

    ``dones[t]`` marks that the episode ended with step t, so neither the
    bootstrap value nor later advantages leak across it.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    M = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    next_value = np.asarray(bootstrap, dtype=np.float64)
    for t in range(M - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * notdone[t] - values[t]
        last = delta + gamma * lam * notdone[t] * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def collect_rollout(policy: ActionPolicy, vec, carry: dict, length: int,
                    rng: np.random.Generator, on_episode=None, greedy: bool = False) -> RolloutBuffer:
    """Run ``length`` steps of every slot and record the transitions.

    ``carry`` holds the trainer-side loop state (``obs``, ``prev_action``,
    ``start``, ``rstate``) and is advanced in place.
    """
    task = policy.task
    B = len(carry["prev_action"])
    buf = RolloutBuffer(
        obs=np.zeros((length, B, task.obs_dim)), prev_actions=np.zeros((length, B), np.int64),
        starts=np.zeros((length, B), bool), actions=np.zeros((length, B), np.int64),
        log_probs=np.zeros((length, B)), values=np.zeros((length, B)),
        rewards=np.zeros((length, B)), dones=np.zeros((length, B), bool),
        deltas=np.zeros((length, B, task.delta_dim), np.float32),
        delta_mask=np.zeros((length, B), np.float32),
        init_state={k: v.copy() for k, v in carry["rstate"].items()}, bootstrap=np.zeros(B))
    with dc.no_grad():
        for t in range(length):
            out = policy.policy_step(carry["obs"], carry["prev_action"], carry["start"], carry["rstate"])
            logits = out.logits.data
            actions = logits.argmax(axis=-1) if greedy else sample_actions(logits, rng)
            buf.obs[t] = carry["obs"]
            buf.prev_actions[t] = carry["prev_action"]
            buf.starts[t] = carry["start"]
            buf.actions[t] = actions
            buf.log_probs[t] = log_prob_of(logits.astype(np.float64), actions)
            buf.values[t] = out.values.data
            sb: StepBatch = vec.step(actions)
            buf.rewards[t] = sb.rewards
            buf.dones[t] = sb.dones
            buf.deltas[t] = sb.deltas
            buf.delta_mask[t] = (sb.delta_valid & (actions < task.n_regular)).astype(np.float32)
            if on_episode is not None:
                for i in np.flatnonzero(sb.dones):
                    on_episode(bool(sb.successes[i]), float(sb.returns[i]), int(sb.lengths[i]))
            carry["rstate"] = out.state
            carry["obs"] = sb.obs
            carry["prev_action"] = np.where(sb.dones, -1, actions)
            carry["start"] = sb.dones.copy()
        # bootstrap value; the advanced recurrent state is discarded
        out = policy.policy_step(carry["obs"], carry["prev_action"], carry["start"], carry["rstate"])
        buf.bootstrap = out.values.data.astype(np.float64)
    return buf


def ppo_losses(policy: ActionPolicy, buf: RolloutBuffer, envs: np.ndarray, advantages: np.ndarray,
               returns: np.ndarray, cfg: TrainConfig) -> tuple[dc.Tensor, dict]:
    """Total loss L_PPO + forward_coef * L_forward on the sequences of slots ``envs``."""
    out = policy.unroll(buf.obs[:, envs], buf.prev_actions[:, envs], buf.starts[:, envs],
                        slice_state(buf.init_state, envs))
    actions = buf.actions[:, envs]
    adv = dc.Tensor(advantages[:, envs].astype(np.float32))
    ret = dc.Tensor(returns[:, envs].astype(np.float32))
    old_logp = buf.log_probs[:, envs].astype(np.float32)

    logp_all = dc.log_softmax(out.logits)
    logp = dc.take_last(logp_all, actions)
    ratio = dc.exp(logp - dc.Tensor(old_logp))
    surr = dc.minimum(ratio * adv, dc.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv)
    policy_loss = -surr.mean()
    value_loss = dc.square(out.values - ret).mean()
    entropy = -(dc.exp(logp_all) * logp_all).sum(axis=-1).mean()
    total = policy_loss + value_loss * cfg.value_coef - entropy * cfg.entropy_coef

    forward_loss = None
    if out.predictions is not None and cfg.forward_coef > 0:
        T, b, n_reg, dd = out.predictions.shape
        mask = buf.delta_mask[:, envs].reshape(-1)
        idx = np.where(mask > 0, actions.reshape(-1), 0)
        pred = dc.gather_rows(out.predictions.reshape(T * b, n_reg, dd), idx)
        target = dc.Tensor(buf.deltas[:, envs].reshape(T * b, dd))
        err = dc.square(pred - target) * dc.Tensor(mask[:, None])
        forward_loss = err.sum() * (1.0 / (max(float(mask.sum()), 1.0) * dd))
        total = total + forward_loss * cfg.forward_coef

    ratio_np = ratio.data.astype(np.float64)
    stats = {
        "policy_loss": float(policy_loss.data),
        "value_loss": float(value_loss.data),
        "entropy": float(entropy.data),
        "forward_loss": float(forward_loss.data) if forward_loss is not None else 0.0,
        "loss": float(total.data),
        "approx_kl": float(np.mean(old_logp - logp.data)),
        "clip_frac": float(np.mean(np.abs(ratio_np - 1) > cfg.clip)),
    }
    return total, stats


def ppo_update(policy: ActionPolicy, optimizer: dc.Adam, buf: RolloutBuffer, cfg: TrainConfig,
               lr: float, rng: np.random.Generator) -> dict:
    """Epochs x minibatches of clipped-surrogate updates; minibatches split the slot axis."""
    adv, ret = compute_gae(buf.rewards, buf.values, buf.dones, buf.bootstrap, cfg.gamma, cfg.gae_lambda)
    if cfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    B = buf.obs.shape[1]
    params = policy.parameters()
    optimizer.lr = lr
    sums: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs):
        for envs in np.array_split(rng.permutation(B), cfg.minibatches):
            envs = np.sort(envs)
            policy.zero_grad()
            total, stats = ppo_losses(policy, buf, envs, adv, ret, cfg)
            if not math.isfinite(stats["loss"]):
                raise NonFiniteError(f"non-finite loss: {stats}")
            total.backward()
            grads, norm = dc.clip_grad_norm([p.grad for p in params], cfg.max_grad_norm)
            optimizer.step(grads)
            stats["grad_norm"] = norm
            for k, v in stats.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
    policy.zero_grad()
    return {k: v / count for k, v in sums.items()}


class Trainer:
    """Resumable training loop state for one seed."""

    def __init__(self, policy: ActionPolicy, cfg: TrainConfig, vec, seed: int,
                 config_hash: str = "", run_config: dict | None = None):
        self.policy = policy
        self.cfg = cfg
        self.vec = vec
        self.seed = seed
        self.config_hash = config_hash
        self.run_config = run_config or {}
        self.optimizer = dc.Adam(policy.parameters(), lr=cfg.lr)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        self.step = 0
        self.updates = 0
        self.episodes = 0
        self.recent: deque = deque(maxlen=100)
        B = cfg.n_envs
        self.carry = {"obs": vec.reset(), "prev_action": np.full(B, -1, np.int64),
                      "start": np.ones(B, bool), "rstate": policy.initial_state(B)}

    def _on_episode(self, success: bool, ret: float, length: int) -> None:
        self.episodes += 1
        self.recent.append((success, ret, length))

    def iterate(self) -> dict:
        cfg = self.cfg
        lr = lr_schedule(min(self.step, cfg.total_steps), cfg.total_steps, cfg.lr)
        buf = collect_rollout(self.policy, self.vec, self.carry, cfg.rollout_length, self.rng,
                              self._on_episode)
        stats = ppo_update(self.policy, self.optimizer, buf, cfg, lr, self.rng)
        self.step += cfg.rollout_length * cfg.n_envs
        self.updates += 1
        recent = list(self.recent)
        record = {"step": self.step, "update": self.updates, "lr": lr}
        record.update(stats)
        record["episodes"] = self.episodes
        record["mean_return"] = float(np.mean([r for _, r, _ in recent])) if recent else None
        record["mean_length"] = float(np.mean([n for _, _, n in recent])) if recent else None
        record["recent_sr"] = float(np.mean([s for s, _, _ in recent])) if recent else None
        return record

    # -- persistence -------------------------------------------------------------
    def to_checkpoint(self) -> ckpt_io.Checkpoint:
        arrays = {}
        for (name, p), m, v in zip(self.policy.named_parameters(), self.optimizer.m, self.optimizer.v):
            arrays[f"param/{name}"] = p.data
            arrays[f"adam_m/{name}"] = m
            arrays[f"adam_v/{name}"] = v
        for k, v in self.carry["rstate"].items():
            arrays[f"rstate/{k}"] = v
        extra = {
            "seed": self.seed,
            "updates": self.updates,
            "episodes": self.episodes,
            "recent": [list(r) for r in self.recent],
            "adam_t": self.optimizer.t,
            "rng": self.rng.bit_generator.state,
            "prev_action": self.carry["prev_action"].tolist(),
            "start": self.carry["start"].tolist(),
            "vec": self.vec.get_state(),
        }
        return ckpt_io.Checkpoint(self.config_hash, self.step, arrays, self.run_config, extra)

    def restore(self, ck: ckpt_io.Checkpoint) -> None:
        self.policy.load_state_dict(ck.params())
        names = [n for n, _ in self.policy.named_parameters()]
        self.optimizer.m = [ck.arrays[f"adam_m/{n}"].copy() for n in names]
        self.optimizer.v = [ck.arrays[f"adam_v/{n}"].copy() for n in names]
        ex = ck.extra
        self.optimizer.t = ex["adam_t"]
        self.rng.bit_generator.state = ex["rng"]
        self.step = ck.step
        self.updates = ex["updates"]
        self.episodes = ex["episodes"]
        self.recent = deque((tuple(r) for r in ex["recent"]), maxlen=100)
        self.vec.set_state(ex["vec"])
        self.carry = {
            "obs": self.vec.obs.copy() if hasattr(self.vec, "obs") else np.array(ex["vec"]["obs"]),
            "prev_action": np.array(ex["prev_action"], dtype=np.int64),
            "start": np.array(ex["start"], dtype=bool),
            "rstate": {k[len("rstate/"):]: v.copy() for k, v in ck.arrays.items() if k.startswith("rstate/")},
        }


def _report(stream: IO[str], seed: int, record: dict, elapsed: float) -> None:
    def fmt(x):
        return "-" if x is None else f"{x:.3f}"
    stream.write(f"[seed {seed}] step {record['step']} sr {fmt(record['recent_sr'])} "
                 f"return {fmt(record['mean_return'])} fwd {fmt(record['forward_loss'])} "
                 f"({elapsed:.0f}s)\n")
    stream.flush()


def checkpoint_name(step: int) -> str:
    return f"step_{step:010d}.ckpt"


def train(run: "RunConfig", seed: int, out_dir: str | Path, workers: int = 1,
          resume: str | Path | None = None, progress: IO[str] | None = sys.stderr,
          max_updates: int | None = None) -> Path:
    """Train one seed; writes ``train_log.jsonl`` and checkpoints under ``out_dir``.

    Returns the path of the final checkpoint.  ``max_updates`` stops early
    (used by tests and pilots) without changing the learning-rate schedule.
    """
    from .config import build_policy  # local import: config depends on this module

    out_dir = Path(out_dir)
    ck_dir = out_dir / "checkpoints"
    ck_dir.mkdir(parents=True, exist_ok=True)
    cfg = run.train
    policy = build_policy(run, seed)
    vec = make_vec_env(run.task_spec, cfg.n_envs, seed, run.regime("train"), run.noise,
                       run.env_overrides, workers)
    trainer = Trainer(policy, cfg, vec, seed, run.config_hash(), run.to_dict())
    log_path = out_dir / "train_log.jsonl"
    if resume is not None:
        ck = ckpt_io.load(resume)
        if ck.config_hash != trainer.config_hash:
            raise ckpt_io.CheckpointError("checkpoint config hash does not match the run config")
        trainer.restore(ck)
        kept = []
        if log_path.exists():
            kept = [ln for ln in log_path.read_text().splitlines()
                    if ln and json.loads(ln)["step"] <= ck.step]
        log_path.write_text("".join(ln + "\n" for ln in kept))
    else:
        log_path.write_text("")
    last_ckpt = None
    t0 = time.time()
    try:
        with log_path.open("a") as log:
            n = 0
            while trainer.step < cfg.total_steps and (max_updates is None or n < max_updates):
                before = trainer.step
                record = trainer.iterate()
                n += 1
                log.write(json.dumps(record) + "\n")
                log.flush()
                if trainer.step // cfg.checkpoint_every > before // cfg.checkpoint_every:
                    last_ckpt = ckpt_io.save(ck_dir / checkpoint_name(trainer.step), trainer.to_checkpoint())
                if progress is not None:
                    _report(progress, seed, record, time.time() - t0)
        final = trainer.to_checkpoint()
        path = ck_dir / checkpoint_name(trainer.step)
        if last_ckpt != path:
            ckpt_io.save(path, final)
        ckpt_io.save(out_dir / "final.ckpt", final)
    finally:
        vec.close()
    return out_dir / "final.ckpt"


__all__ = ["TrainConfig", "RolloutBuffer", "lr_schedule", "compute_gae", "collect_rollout",
           "ppo_losses", "ppo_update", "Trainer", "train", "checkpoint_name"]
