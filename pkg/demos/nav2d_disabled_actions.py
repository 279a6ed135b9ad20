"""
A navigation room with dead actuators
=====================================

In the 2D navigation task the agent can move forward, rotate in place, or
declare End.  Disabling the clockwise rotations turns five of the sixteen
actions into no-ops.  Here a scripted agent keeps trying one of them, and the
environment counts every disabled-action use.
"""
import numpy as np

from aap.drift import DriftSpec, disabled_set
from aap.envs.nav2d import ACTIONS, NO_NOISE, Nav2DEnv

for i, a in enumerate(ACTIONS):
    print(f"{i:2d} {a.kind:6s} {a.value}")

dead = disabled_set("right")
print("disabled:", sorted(dead))

env = Nav2DEnv()
obs = env.reset(scene_seed=11, drift=DriftSpec(0.2, 0.0, dead), noise=NO_NOISE, episode_seed=0)
print("scene:", len(env.scene.obstacles), "obstacles;",
      f"start distance {env.start_distance:.2f} m, geodesic {env.shortest_path_length():.2f} m")

stuck_rotation = sorted(dead)[0]
for step in range(6):
    pose = (env.x, env.y, env.heading)
    obs, reward, done, info = env.step(stuck_rotation)
    print(f"step {step}: pose unchanged {(env.x, env.y, env.heading) == pose}, "
          f"disabled uses so far {info['disabled_use_count']}")

# moving forward still works, but every move carries the drift of 0.2 m
forward = next(i for i, a in enumerate(ACTIONS) if a.kind == "move")
before = np.array([env.x, env.y])
env.step(forward)
print(f"commanded {ACTIONS[forward].value} m, moved {np.linalg.norm([env.x, env.y] - before):.3f} m")
