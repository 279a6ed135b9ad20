"""
What action drift does to a particle
====================================

The particle is pushed by one of twelve axis-aligned accelerations.  Under
rotation drift every commanded push is turned by the same unknown angle for
the whole episode, so "push right" may end up pushing down or even left.
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from aap.drift import DriftSpec
from aap.envs.particle import ACTION_MAGNITUDES, ParticleEnv, apply_drift_rotation

push_right = 4   # +0.8 along x
print("commanded", ACTION_MAGNITUDES[push_right])
for dr in (0, 45, 90, 180):
    print(f"  drift {dr:4d} deg -> applied {apply_drift_rotation(ACTION_MAGNITUDES[push_right], dr).round(3)}")

# the same open-loop action sequence under four drift angles
plan = [push_right] * 12 + [0] * 12
fig, ax = plt.subplots(figsize=(5, 5))
for dr in (0, 45, 90, 180):
    env = ParticleEnv("pointnav")
    env.reset(DriftSpec(0.0, dr), seed=3)
    xs, ys = [env.p[0]], [env.p[1]]
    for a in plan:
        _, _, done, _ = env.step(a)
        xs.append(env.p[0])
        ys.append(env.p[1])
        if done:
            break
    ax.plot(xs, ys, marker=".", label=f"d_r = {dr} deg")
ax.plot(*env.target, "k*", markersize=12, label="target")
ax.set_xlim(-1, 1)
ax.set_ylim(-1, 1)
ax.set_aspect("equal")
ax.legend(loc="lower left")

out = Path("demo_output")
out.mkdir(exist_ok=True)
fig.savefig(out / "particle_drift.png", dpi=100)
print("wrote", out / "particle_drift.png")
