"""
A short tour of the autodiff engine
===================================

Tensors record the operations applied to them; ``backward`` walks that
record in reverse and accumulates gradients into the leaves.
"""
import numpy as np

from aap import diffcore as dc
from aap.netblocks import MLP, MlpSpec

x = dc.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
y = dc.sum_(x * x)        # y = x1^2 + x2^2 + x3^2
y.backward()
print("y =", y.data, " dy/dx =", x.grad)   # 2x

# broadcasting works as in numpy, and gradients are summed back to the input shape
w = dc.Tensor(np.ones((3, 4)), requires_grad=True)
b = dc.Tensor(np.zeros(4), requires_grad=True)
out = dc.mean(dc.square(dc.matmul(dc.Tensor(np.eye(3)), w) + b))
out.backward()
print("bias grad shape:", b.grad.shape)

# a small network, trained with Adam on a toy regression
rng = np.random.default_rng(0)
net = MLP(MlpSpec((1, 32, 32, 1)), rng)
xs = np.linspace(-2, 2, 64)[:, None]
ys = np.sin(2 * xs)
opt = dc.Adam(list(net.parameters()), lr=1e-2)
for step in range(400):
    net.zero_grad()
    loss = dc.mean(dc.square(net(dc.Tensor(xs)) - dc.Tensor(ys)))
    loss.backward()
    grads, norm = dc.clip_grad_norm([p.grad for p in net.parameters()], 1.0)
    opt.step(grads)
    if step % 100 == 0:
        print(f"step {step:3d}  mse {float(loss.data):.4f}  grad norm {norm:.3f}")
print(f"final mse {float(loss.data):.4f}")

# gradients can be checked against central differences
name, p = next((n, q) for n, q in net.named_parameters() if q.data.ndim == 2)
i = (0, 3)
h = 1e-3
orig = p.data[i]
p.data[i] = orig + h
with dc.no_grad():
    up = float(dc.mean(dc.square(net(dc.Tensor(xs)) - dc.Tensor(ys))).data)
p.data[i] = orig - h
with dc.no_grad():
    down = float(dc.mean(dc.square(net(dc.Tensor(xs)) - dc.Tensor(ys))).data)
p.data[i] = orig
net.zero_grad()
dc.mean(dc.square(net(dc.Tensor(xs)) - dc.Tensor(ys))).backward()
print(name, "analytic", float(p.grad[i]), " numeric", (up - down) / (2 * h))
