"""
Per-action memory and the order-invariant head
==============================================

The policy never sees action identities.  Each regular action owns one row of
a memory bank that only changes when that action is executed, and the row is
fed by the state change the action caused.  The head that scores actions is a
transformer without positional encoding, so shuffling the rows shuffles the
logits and leaves the value alone.
"""
import numpy as np

from aap import diffcore as dc
from aap.drift import DriftSpec
from aap.policy import ActionPolicy, probabilities
from aap.tasks import get_task

task = get_task("particle-pointnav")
policy = ActionPolicy(task, "aap", seed=0)
env = task.make_env()
obs = env.reset(DriftSpec(0.0, 120.0), seed=5)

state = policy.initial_state(1)
prev, start = np.array([-1]), np.array([True])
for action in [4, 4, 10, 1]:
    with dc.no_grad():
        out = policy.policy_step(obs[None], prev, start, state)
    touched = np.flatnonzero(np.abs(out.state["bank"][0] - state["bank"][0]).max(axis=1) > 0)
    print(f"executed before this step: {int(prev[0]):2d}   bank rows updated: {touched.tolist()}")
    state = out.state
    obs, reward, done, info = env.step(action)
    prev, start = np.array([action]), np.array([False])

print("visited actions:", np.flatnonzero(state["visited"][0]).tolist())
# an untrained head scores every action the same
print("action probabilities:", probabilities(out.logits.data[0]).round(3))

# order invariance of the head
rng = np.random.default_rng(1)
emb = rng.normal(size=(task.n_actions, policy.dims.memory)).astype(np.float32)
belief = rng.normal(size=policy.dims.belief).astype(np.float32)
perm = rng.permutation(task.n_actions)
with dc.no_grad():
    logits, value = policy.oi_head(dc.Tensor(emb), dc.Tensor(belief))
    logits_p, value_p = policy.oi_head(dc.Tensor(emb[perm]), dc.Tensor(belief))
print("max |logits[perm] - logits(perm)|:", float(np.abs(logits.data[perm] - logits_p.data).max()))
print("value change under permutation:", float(abs(value.data - value_p.data)))
