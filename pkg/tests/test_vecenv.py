import numpy as np
import pytest

from aap.drift import nav2d_regime, particle_regime
from aap.tasks import get_task
from aap.vecenv import TRAIN_SCENES, VecEnv, make_vec_env


def _drive(venv, steps, seed=0):
    rng = np.random.default_rng(seed)
    batches = [venv.reset()]
    for _ in range(steps):
        b = venv.step(rng.integers(0, 12, size=8))  # valid in both tasks
        batches.append(np.concatenate([b.obs.ravel(), b.rewards, b.dones, b.deltas.ravel()]))
    return batches


@pytest.mark.parametrize("task_name, regime", [("particle-pointnav", particle_regime("train")),
                                               ("nav2d-pointnav", nav2d_regime("train"))])
def test_worker_count_does_not_change_trajectories(task_name, regime):
    task = get_task(task_name)
    overrides = {"step_cap": 7}
    serial = make_vec_env(task, 8, 5, regime, None, overrides, 1)
    parallel = make_vec_env(task, 8, 5, regime, None, overrides, 3)
    try:
        for a, b in zip(_drive(serial, 20), _drive(parallel, 20)):
            assert a.tobytes() == b.tobytes()
    finally:
        serial.close()
        parallel.close()


def test_slots_are_seeded_independently_of_grouping():
    task = get_task("particle-pointnav")
    regime = particle_regime("train")
    whole = VecEnv(task, 6, 9, regime)
    tail = VecEnv(task, 3, 9, regime, first_slot=3)
    np.testing.assert_array_equal(whole.reset()[3:], tail.reset())


def test_state_roundtrip_continues_identically():
    task = get_task("nav2d-pointnav")
    venv = make_vec_env(task, 8, 1, nav2d_regime("train"), None, {"step_cap": 9}, 1)
    _drive(venv, 5)
    saved = venv.get_state()
    a = _drive_steps(venv, 12)
    venv.set_state(saved)
    b = _drive_steps(venv, 12)
    assert a == b


def _drive_steps(venv, steps):
    rng = np.random.default_rng(3)
    out = []
    for _ in range(steps):
        b = venv.step(rng.integers(0, 15, size=8))
        out.append(b.obs.tobytes() + b.rewards.tobytes() + b.dones.tobytes())
    return out


def test_training_scenes_come_from_training_range():
    task = get_task("nav2d-pointnav")
    venv = VecEnv(task, 4, 0, nav2d_regime("train"))
    venv.reset()
    assert all(0 <= e.scene.seed < TRAIN_SCENES for e in venv.envs)
