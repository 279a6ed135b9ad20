import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aap import diffcore as dc
from aap.config import build_policy, parse_config, task_defaults
from aap.policy import ActionPolicy, ModelDims
from aap.tasks import get_task
from aap.trainer import (TrainConfig, collect_rollout, compute_gae, lr_schedule, ppo_losses, train)
from aap.vecenv import make_vec_env
from helpers import rel_err, tiny_config_text

SMALL = ModelDims(state_hidden=16, goal_embed=8, change_proj=16, memory=16, belief=16, head_dim=16,
                  head_layers=1, head_heads=2, forward_hidden=16, prediction_embed=8)


def gae_oracle(rewards, values, dones, bootstrap, gamma, lam):
    """A_t = sum_k (gamma*lam)^k delta_{t+k}, truncated at the first episode end."""
    M = len(rewards)
    nxt = np.append(values[1:], bootstrap)
    delta = [rewards[t] + gamma * nxt[t] * (1 - dones[t]) - values[t] for t in range(M)]
    adv = np.zeros(M)
    for t in range(M):
        total, weight = 0.0, 1.0
        for k in range(t, M):
            total += weight * delta[k]
            if dones[k]:
                break
            weight *= gamma * lam
        adv[t] = total
    return adv


def test_gae_lambda_zero_is_one_step_td():
    rng = np.random.default_rng(0)
    r, v, d = rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), rng.random((6, 2)) < 0.3
    boot = rng.normal(size=2)
    adv, ret = compute_gae(r, v, d, boot, 0.9, 0.0)
    nxt = np.concatenate([v[1:], boot[None]])
    np.testing.assert_array_equal(adv, r + 0.9 * nxt * (1 - d) - v)
    np.testing.assert_array_equal(ret, adv + v)


def test_gae_gamma_zero():
    rng = np.random.default_rng(1)
    r, v = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    adv, _ = compute_gae(r, v, np.zeros((5, 3)), np.ones(3), 0.0, 0.95)
    np.testing.assert_allclose(adv, r - v, atol=0)


def test_gae_length6_oracle():
    r = np.array([0.1, -0.2, 0.5, 1.0, 0.0, -0.3])
    v = np.array([0.3, 0.2, -0.1, 0.4, 0.8, 0.1])
    d = np.array([0, 0, 1, 0, 0, 0])
    adv, _ = compute_gae(r[:, None], v[:, None], d[:, None], np.array([0.7]), 0.99, 0.95)
    np.testing.assert_allclose(adv[:, 0], gae_oracle(r, v, d, 0.7, 0.99, 0.95), atol=1e-8)


@given(st.integers(1, 8), st.integers(0, 2**31), st.floats(0, 1), st.floats(0, 1))
def test_gae_matches_oracle(M, seed, gamma, lam):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=M), rng.normal(size=M)
    d = (rng.random(M) < 0.25).astype(float)
    boot = float(rng.normal())
    adv, _ = compute_gae(r[:, None], v[:, None], d[:, None], np.array([boot]), gamma, lam)
    np.testing.assert_allclose(adv[:, 0], gae_oracle(r, v, d, boot, gamma, lam), atol=1e-8)


def test_lr_schedule():
    assert lr_schedule(0, 2_000_000, 1e-3) == 1e-3
    assert lr_schedule(2_000_000, 2_000_000, 1e-3) == 0.0
    assert lr_schedule(1_000_000, 2_000_000, 1e-3) == pytest.approx(5e-4)
    with pytest.raises(ValueError):
        lr_schedule(-1, 10, 1e-3)
    with pytest.raises(ValueError):
        lr_schedule(11, 10, 1e-3)


def test_train_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.clip, cfg.value_coef, cfg.entropy_coef, cfg.forward_coef) == (0.1, 0.5, 0.01, 1.0)
    assert (cfg.gae_lambda, cfg.epochs, cfg.minibatches, cfg.max_grad_norm) == (0.95, 4, 4, 0.5)
    assert task_defaults("particle-pointnav")["train"].rollout_length == 200
    assert task_defaults("particle-pointnav")["train"].lr == 1e-3
    assert task_defaults("nav2d-pointnav")["train"].rollout_length == 128
    for bad in ({"gamma": 1.5}, {"clip": 0.0}, {"forward_coef": -1.0}, {"gae_lambda": -0.1}):
        with pytest.raises(ValueError, match=next(iter(bad))):
            TrainConfig(**bad)


@given(st.floats(0.01, 5), st.floats(-10, 10), st.floats(0.01, 0.5))
def test_clipped_surrogate_is_pessimistic(ratio, adv, eps):
    r, a = dc.Tensor(np.array([ratio])), dc.Tensor(np.array([adv]))
    clipped = dc.minimum(r * a, dc.clip(r, 1 - eps, 1 + eps) * a)
    assert clipped.data[0] <= ratio * adv + 1e-12


def _rollout(task_name="nav2d-pointnav", variant="aap", B=3, M=6, seed=0, jitter=0.0):
    task = get_task(task_name)
    policy = ActionPolicy(task, variant, SMALL, seed=seed)
    if jitter:
        # move off the zero-bias start, where all cold tokens coincide at the origin
        rng = np.random.default_rng(seed + 1)
        for p in policy.parameters():
            p.data += rng.normal(0, jitter, p.data.shape).astype(p.data.dtype)
    regime = (parse_config(f"[run]\ntask = {task_name}\n")).regime("train")
    vec = make_vec_env(task, B, seed, regime, None, {}, 1)
    carry = {"obs": vec.reset(), "prev_action": np.full(B, -1, np.int64), "start": np.ones(B, bool),
             "rstate": policy.initial_state(B)}
    buf = collect_rollout(policy, vec, carry, M, np.random.default_rng(seed))
    return policy, buf


def _arrays(buf):
    fields = ("obs", "prev_actions", "starts", "actions", "log_probs", "values", "rewards", "dones",
              "deltas", "delta_mask", "bootstrap")
    return [getattr(buf, f).tobytes() for f in fields]


def test_rollout_is_deterministic_and_masks_forward_targets():
    _, a = _rollout()
    _, b = _rollout()
    assert _arrays(a) == _arrays(b)
    assert a.length == 6
    task = get_task("nav2d-pointnav")
    np.testing.assert_array_equal(a.delta_mask > 0, a.actions < task.n_regular)


def test_fresh_policy_surrogate_is_minus_mean_advantage():
    policy, buf = _rollout()
    adv = np.random.default_rng(0).normal(size=buf.rewards.shape)
    _, stats = ppo_losses(policy, buf, np.arange(3), adv, buf.values, TrainConfig())
    assert stats["policy_loss"] == pytest.approx(-adv.mean(), abs=1e-6)
    assert stats["clip_frac"] == 0.0


def test_zero_advantage_and_perfect_values_leave_entropy_and_forward_terms():
    policy, buf = _rollout()
    cfg = TrainConfig()
    zeros = np.zeros_like(buf.rewards)
    total, stats = ppo_losses(policy, buf, np.arange(3), zeros, buf.values, cfg)
    assert stats["policy_loss"] == 0.0
    assert stats["value_loss"] == pytest.approx(0.0, abs=1e-10)
    assert stats["loss"] == pytest.approx(-cfg.entropy_coef * stats["entropy"] + stats["forward_loss"], abs=1e-6)


def total_loss_fd_error(variant, task_name="nav2d-pointnav", seed=0):
    """Relative error of float32 loss gradients against 64-bit central differences."""
    policy, buf = _rollout(task_name, variant, B=2, M=5, seed=seed, jitter=0.05)
    rng = np.random.default_rng(seed + 3)
    adv, ret = rng.normal(size=buf.rewards.shape), rng.normal(size=buf.rewards.shape)
    cfg = TrainConfig()
    envs = np.arange(2)
    policy.zero_grad()
    total, _ = ppo_losses(policy, buf, envs, adv, ret, cfg)
    total.backward()
    analytic = {n: p.grad.copy() for n, p in policy.named_parameters()}
    assert total.dtype == np.float32

    policy.astype(np.float64)
    h = 1e-4
    num, ana = [], []
    for name, p in policy.named_parameters():
        idx = rng.choice(p.data.size, min(6, p.data.size), replace=False)
        for flat in idx:
            i = np.unravel_index(flat, p.data.shape)
            orig = p.data[i]
            vals = []
            for x in (orig + h, orig - h):
                p.data[i] = x
                with dc.no_grad():
                    vals.append(float(ppo_losses(policy, buf, envs, adv, ret, cfg)[0].data))
            p.data[i] = orig
            num.append((vals[0] - vals[1]) / (2 * h))
            ana.append(analytic[name][i])
    return rel_err(ana, num)


@pytest.mark.parametrize("variant", ["aap", "model_based"])
def test_total_loss_gradient_matches_finite_differences(variant):
    assert total_loss_fd_error(variant) < 1e-3




def test_training_is_pure_function_of_config_and_seed(tmp_path):
    run = parse_config(tiny_config_text(total_steps=160))
    a = tmp_path / "a"
    b = tmp_path / "b"
    train(run, 0, a, progress=None)
    train(run, 0, b, progress=None)
    la, lb = (a / "train_log.jsonl").read_text(), (b / "train_log.jsonl").read_text()
    assert la == lb and len(la.splitlines()) == 4
    assert (a / "final.ckpt").read_bytes() == (b / "final.ckpt").read_bytes()
    assert sorted(p.name for p in (a / "checkpoints").iterdir()) == \
        ["step_0000000080.ckpt", "step_0000000160.ckpt"]


@pytest.mark.parametrize("task", ["particle-pointnav", "nav2d-pointnav"])
def test_resume_reproduces_next_log_line(tmp_path, task):
    run = parse_config(tiny_config_text(task=task, total_steps=200))
    full, part = tmp_path / "full", tmp_path / "part"
    train(run, 1, full, progress=None, max_updates=3)
    ck = train(run, 1, part, progress=None, max_updates=2)
    train(run, 1, part, resume=ck, progress=None, max_updates=1)
    a = (full / "train_log.jsonl").read_text().splitlines()
    b = (part / "train_log.jsonl").read_text().splitlines()
    assert len(b) == 3 and b[2] == a[2]
    assert json.loads(b[2])["step"] == 120


def test_resume_rejects_other_config(tmp_path):
    from aap.checkpoint import CheckpointError
    run = parse_config(tiny_config_text())
    ck = train(run, 0, tmp_path / "a", progress=None, max_updates=1)
    other = parse_config(tiny_config_text(variant="gru_lac"))
    with pytest.raises(CheckpointError):
        train(other, 0, tmp_path / "b", resume=ck, progress=None)


def test_short_training_improves_particle_return(tmp_path):
    """A few hundred updates are not needed to see learning: the value loss falls."""
    run = parse_config(tiny_config_text(variant="gru_lac", total_steps=4000, rollout_length=20,
                                        n_envs=8, lr=0.003))
    train(run, 0, tmp_path / "r", progress=None)
    log = [json.loads(ln) for ln in (tmp_path / "r" / "train_log.jsonl").read_text().splitlines()]
    assert all(np.isfinite(r["loss"]) for r in log)
    assert log[-1]["lr"] < log[0]["lr"]
    assert build_policy(run, 0).num_parameters() > 0
