"""Neural building blocks on top of :mod:`aap.diffcore`.

Modules hold their parameters as attributes (``Tensor`` leaves or child
modules).  ``named_parameters`` walks attributes in sorted order so the
parameter index of a checkpoint does not depend on construction order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor


class Module:
    """Container of parameters and child modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key in sorted(vars(self)):
            value = vars(self)[key]
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ShapeError(f"load {name}", p.data.shape, arr.shape)
            p.data = np.array(arr, dtype=p.data.dtype, order="C")

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (float64 for finite-difference checks)."""
        for p in self.parameters():
            p.data = np.ascontiguousarray(p.data, dtype=dtype)
            p.grad = np.zeros_like(p.data)
        return self


def _param(arr: np.ndarray) -> Tensor:
    # C order everywhere: BLAS rounding depends on layout, and checkpoints reload as C order
    return Tensor(np.ascontiguousarray(arr, dtype=np.float32), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 1.0,
                 bias: bool = True):
        # orthogonal init, the usual choice for small PPO networks
        a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        w = q if n_in >= n_out else q.T
        self.weight = _param(gain * w[:n_in, :n_out])
        self.bias = _param(np.zeros(n_out)) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError("linear", x.shape, self.weight.shape)
        y = dc.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


_ACTIVATIONS = {"tanh": dc.tanh, "relu": dc.relu}


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    activation: str = "tanh"
    activate_output: bool = True

    def __post_init__(self):
        if len(self.widths) < 2 or any(w <= 0 for w in self.widths):
            raise ValueError(f"MLP needs at least two positive widths, got {self.widths}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class MLP(Module):
    def __init__(self, spec: MlpSpec, rng: np.random.Generator, out_gain: float | None = None):
        self.spec = spec
        n = len(spec.widths) - 1
        gains = [math.sqrt(2)] * n
        if out_gain is not None:
            gains[-1] = out_gain
        self.layers = [Linear(a, b, rng, gain=g)
                       for a, b, g in zip(spec.widths[:-1], spec.widths[1:], gains)]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.spec.widths[0]:
            raise ShapeError("mlp", x.shape, (self.spec.widths[0],))
        act = _ACTIVATIONS[self.spec.activation]
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.spec.activate_output:
                x = act(x)
        return x


def mlp_forward(mlp: MLP, x: Tensor) -> Tensor:
    return mlp(x)


class GRUCell(Module):
    """Gated recurrent unit (reset, update, candidate gate ordering).

    The input projection is exposed separately so callers can compute it for
    a whole sequence at once and only run the hidden-to-hidden part per step.
    """

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.n_in, self.hidden = n_in, hidden
        self.w_ih = Linear(n_in, 3 * hidden, rng)
        self.w_hh = Linear(hidden, 3 * hidden, rng)

    def project_input(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError("gru input", x.shape, (self.n_in,))
        return self.w_ih(x)

    def step_projected(self, xp: Tensor, h: Tensor) -> Tensor:
        if h.shape[-1] != self.hidden:
            raise ShapeError("gru hidden", h.shape, (self.hidden,))
        return dc.gru_gates(xp, self.w_hh(h), h)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return self.step_projected(self.project_input(x), h)


def gru_step(cell: GRUCell, x: Tensor, h: Tensor) -> tuple[Tensor, Tensor]:
    """Returns (output, new hidden); the output is the new hidden."""
    h_new = cell(x, h)
    return h_new, h_new


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = _param(np.ones(dim))
        self.beta = _param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return dc.layer_norm(x, self.gamma, self.beta, self.eps)


@dataclass(frozen=True)
class TransformerSpec:
    layers: int = 2
    heads: int = 4
    dim: int = 64
    ff_dim: int | None = None

    def __post_init__(self):
        if self.layers <= 0 or self.heads <= 0:
            raise ValueError("layers and heads must be positive")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.ff_dim is not None and self.ff_dim < self.dim:
            raise ValueError("ff_dim must be >= dim")

    @property
    def ff(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 4 * self.dim


class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.dim, self.heads = dim, heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.out = Linear(dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        # x: (N, T, D)
        N, T, D = x.shape
        H, dh = self.heads, D // self.heads
        qkv = self.qkv(x).reshape(N, T, 3, H, dh).transpose(2, 0, 3, 1, 4)
        q = qkv[0].reshape(N * H, T, dh)
        k = qkv[1].reshape(N * H, T, dh)
        v = qkv[2].reshape(N * H, T, dh)
        scores = dc.matmul(q, k.transpose(0, 2, 1)) * (1.0 / math.sqrt(dh))
        att = dc.softmax(scores)
        ctx = dc.matmul(att, v).reshape(N, H, T, dh).transpose(0, 2, 1, 3).reshape(N, T, D)
        return self.out(ctx)


class EncoderLayer(Module):
    def __init__(self, spec: TransformerSpec, rng: np.random.Generator):
        self.ln1 = LayerNorm(spec.dim)
        self.attn = SelfAttention(spec.dim, spec.heads, rng)
        self.ln2 = LayerNorm(spec.dim)
        self.ff1 = Linear(spec.dim, spec.ff, rng, gain=math.sqrt(2))
        self.ff2 = Linear(spec.ff, spec.dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff2(dc.relu(self.ff1(self.ln2(x))))


class TransformerEncoder(Module):
    """Pre-LN transformer encoder with no positional encoding.

    Every weight is shared across token positions, so permuting the input
    tokens permutes the outputs the same way.
    """

    def __init__(self, spec: TransformerSpec, rng: np.random.Generator):
        self.spec = spec
        self.blocks = [EncoderLayer(spec, rng) for _ in range(spec.layers)]
        self.ln_out = LayerNorm(spec.dim)

    def __call__(self, tokens: Tensor) -> Tensor:
        if tokens.ndim != 3 or tokens.shape[-1] != self.spec.dim or tokens.shape[1] < 1:
            raise ShapeError("oi_encoder", tokens.shape, (self.spec.dim,))
        x = tokens
        for block in self.blocks:
            x = block(x)
        return self.ln_out(x)


def oi_encoder_forward(encoder: TransformerEncoder, tokens: Sequence[Tensor] | Tensor) -> Tensor:
    """Run the encoder over a token set; a list of (N, D) tokens is stacked on axis 1."""
    if not isinstance(tokens, Tensor):
        dims = {t.shape[-1] for t in tokens}
        if len(tokens) == 0 or dims != {encoder.spec.dim}:
            raise ShapeError("oi_encoder", *[t.shape for t in tokens])
        tokens = dc.stack(list(tokens), axis=1)
    return encoder(tokens)
