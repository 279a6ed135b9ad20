"""Action Adaptive Policy and the baseline/ablation variants.

All variants share one batched interface, :meth:`ActionPolicy.unroll`, which
processes a (T, B) block of observations.  Non-recurrent parts (MLPs, input
projections, the transformer head, the forward head) run once over all T*B
positions; only the hidden-to-hidden recurrences run step by step.  A rollout
calls ``unroll`` with T=1; the PPO update replays whole sequences from the
stored recurrent-state snapshot.

Recurrent state is a plain dict of arrays with a leading batch axis:

``prev_feat``   state features of the previous observation
``bank``        per-action memory rows (rows never executed stay zero)
``visited``     1.0 where a row has been written this episode
``belief``      policy RNN hidden state
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor
from .netblocks import GRUCell, MLP, Linear, MlpSpec, Module, TransformerEncoder, TransformerSpec
from .tasks import TaskSpec

VARIANTS = ("aap", "gru_lac", "aap_lac", "action_semantics", "model_based")


@dataclass(frozen=True)
class ModelDims:
    state_hidden: int = 64
    goal_embed: int = 8
    change_proj: int = 64
    memory: int = 128
    belief: int = 64
    head_dim: int = 64
    head_layers: int = 2
    head_heads: int = 4
    forward_hidden: int = 64
    prediction_embed: int = 32

    def __post_init__(self):
        for key, value in asdict(self).items():
            if value <= 0:
                raise ValueError(f"model dimension {key} must be positive, got {value}")
        if self.head_dim % self.head_heads:
            raise ValueError(f"head_dim {self.head_dim} not divisible by head_heads {self.head_heads}")

    @classmethod
    def nav2d_default(cls) -> "ModelDims":
        return cls(state_hidden=128, goal_embed=8, change_proj=128, memory=256, belief=128,
                   head_dim=128, forward_hidden=128, prediction_embed=64)


@dataclass
class PolicyOutput:
    logits: Tensor            # (T, B, n_actions)
    values: Tensor            # (T, B)
    predictions: Tensor | None  # (T, B, n_regular, delta_dim)
    state: dict[str, np.ndarray]


def _const(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float32))


class ActionPolicy(Module):
    """One configurable network covering all variants.

    ``encoder``: 'impact' (per-action recurrent memory), 'semantics' (a learned
    embedding per action) or None.  ``head``: 'oi' (order-invariant
    transformer) or 'linear'.  ``model_based`` feeds embedded state-change
    predictions to the belief RNN instead of the raw embeddings.
    """

    def __init__(self, task: TaskSpec, variant: str = "aap", dims: ModelDims | None = None,
                 seed: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown policy variant {variant!r}; expected one of {VARIANTS}")
        self.task = task
        self.variant = variant
        self.dims = dims = dims or ModelDims()
        self.encoder_kind = {"aap": "impact", "aap_lac": "impact", "model_based": "impact",
                             "action_semantics": "semantics", "gru_lac": None}[variant]
        self.head_kind = "oi" if variant in ("aap", "action_semantics") else "linear"
        self.model_based = variant == "model_based"
        rng = np.random.default_rng(seed)
        n, n_reg = task.n_actions, task.n_regular

        self.state_mlp = MLP(MlpSpec((task.feature_dim, dims.state_hidden, dims.state_hidden,
                                      dims.state_hidden)), rng)
        self.goal_mlp = MLP(MlpSpec((task.goal_dim, dims.goal_embed)), rng)
        h_dim = dims.state_hidden + dims.goal_embed

        if self.encoder_kind == "impact":
            self.change_proj = Linear(2 * dims.state_hidden, dims.change_proj, rng)
            self.memory_gru = GRUCell(dims.change_proj + dims.goal_embed, dims.memory, rng)
            if task.special:
                # identity-keyed embeddings for actions with fixed semantics
                self.special_embed = Tensor(rng.normal(0, 0.1, (len(task.special), dims.memory))
                                            .astype(np.float32), requires_grad=True)
        elif self.encoder_kind == "semantics":
            self.action_table = Tensor(rng.normal(0, 0.1, (n, dims.memory)).astype(np.float32),
                                       requires_grad=True)

        if self.encoder_kind is not None:
            self.forward_mlp = MLP(MlpSpec((dims.memory, dims.forward_hidden, task.delta_dim),
                                           activate_output=False), rng, out_gain=1.0)

        if self.model_based:
            self.prediction_embed = Linear(task.delta_dim, dims.prediction_embed, rng)
            belief_in = h_dim + n_reg * dims.prediction_embed
        elif self.encoder_kind is not None:
            belief_in = h_dim + n * dims.memory
        else:
            belief_in = h_dim
        self.belief_gru = GRUCell(belief_in, dims.belief, rng)

        if self.head_kind == "oi":
            spec = TransformerSpec(dims.head_layers, dims.head_heads, dims.head_dim)
            self.token_proj = Linear(dims.memory, dims.head_dim, rng)
            self.belief_proj = Linear(dims.belief, dims.head_dim, rng)
            self.oi_encoder = TransformerEncoder(spec, rng)
            self.logit_ff = MLP(MlpSpec((dims.head_dim, dims.head_dim, 1), activate_output=False),
                                rng, out_gain=0.01)
            self.value_ff = MLP(MlpSpec((dims.head_dim, dims.head_dim, 1), activate_output=False),
                                rng, out_gain=1.0)
        else:
            self.actor = Linear(dims.belief, n, rng, gain=0.01)
            self.critic = Linear(dims.belief, 1, rng, gain=1.0)

    # -- recurrent state ------------------------------------------------------
    @property
    def has_forward_head(self) -> bool:
        return self.encoder_kind is not None

    def initial_state(self, batch: int) -> dict[str, np.ndarray]:
        d, t = self.dims, self.task
        return {
            "prev_feat": np.zeros((batch, t.feature_dim), np.float32),
            "bank": np.zeros((batch, t.n_regular, d.memory), np.float32),
            "visited": np.zeros((batch, t.n_regular), np.float32),
            "belief": np.zeros((batch, d.belief), np.float32),
        }

    # -- components -------------------------------------------------------------
    def encode_state(self, feat: Tensor, goal: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (h, r, g) with h = [r, g]."""
        if feat.shape[-1] != self.task.feature_dim or goal.shape[-1] != self.task.goal_dim:
            raise ShapeError("encode_state", feat.shape, goal.shape)
        r = self.state_mlp(feat)
        g = self.goal_mlp(goal)
        return dc.concat([r, g], axis=-1), r, g

    def extract_state_change(self, r: Tensor, r_prev: Tensor, g: Tensor) -> Tensor:
        """f = [linear([r_t, r_{t-1}]), g]."""
        return dc.concat([self.change_proj(dc.concat([r, r_prev], axis=-1)), g], axis=-1)

    def cold_embedding(self) -> Tensor:
        """Embedding of an action not yet executed: GRU(zero input, zero memory)."""
        z_in = _const(np.zeros((1, self.memory_gru.n_in)))
        z_h = _const(np.zeros((1, self.dims.memory)))
        return self.memory_gru(z_in, z_h)

    def update_action_impact(self, f_proj: Tensor, prev_action: np.ndarray, bank: Tensor,
                             visited: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Write row ``prev_action[b]`` of each bank with the shared memory GRU.

        ``f_proj`` is the memory GRU's input projection of the state-change
        feature, (B, 3*memory).  Entries with ``prev_action < 0`` are left
        untouched.  Returns the new bank and visited mask.
        """
        prev_action = np.asarray(prev_action)
        if np.any(np.isin(prev_action, self.task.special)):
            raise ValueError("special actions are not encoded by the memory GRU; use register_special")
        if np.any(prev_action >= self.task.n_regular):
            raise ValueError("action index out of range")
        update = prev_action >= 0
        if not update.any():
            return bank, visited
        idx = np.where(update, prev_action, 0)
        old = dc.gather_rows(bank, idx)
        new = self.memory_gru.step_projected(f_proj, old)
        if not update.all():
            new = old + (new - old) * _const(update[:, None])
        visited = visited.copy()
        visited[update, idx[update]] = 1.0
        return dc.scatter_rows(bank, idx, new), visited

    def embeddings(self, bank: Tensor, visited: np.ndarray, cold: Tensor) -> Tensor:
        """E for regular actions: the memory row if written, otherwise the cold embedding."""
        return bank + cold.reshape(1, 1, -1) * _const((1.0 - visited)[..., None])

    def register_special(self, emb: Tensor) -> Tensor:
        """Append the fixed embeddings of special actions (End) to a (..., n_regular, H) set."""
        if not self.task.special:
            return emb
        lead = emb.shape[:-2]
        ones = _const(np.ones(lead + (len(self.task.special), 1)))
        return dc.concat([emb, ones * self.special_embed], axis=-2)

    def forward_head(self, emb: Tensor) -> Tensor:
        """Per-action state-change prediction from (..., n_regular, H) embeddings."""
        return self.forward_mlp(emb)

    def oi_head(self, emb: Tensor, belief: Tensor) -> tuple[Tensor, Tensor]:
        """Order-invariant head: (..., n, H) embeddings and (..., Hb) belief -> logits, value."""
        lead = emb.shape[:-2]
        if belief.shape[:-1] != lead or emb.shape[-2] != self.task.n_actions:
            raise ShapeError("oi_head", emb.shape, belief.shape)
        n = emb.shape[-2]
        k = int(np.prod(lead)) if lead else 1
        a_tok = self.token_proj(emb).reshape(k, n, self.dims.head_dim)
        b_tok = self.belief_proj(belief).reshape(k, 1, self.dims.head_dim)
        out = self.oi_encoder(dc.concat([a_tok, b_tok], axis=1))
        logits = self.logit_ff(out[:, :n]).reshape(*lead, n)
        value = self.value_ff(out[:, n]).reshape(*lead)
        return logits, value

    def linear_head(self, belief: Tensor) -> tuple[Tensor, Tensor]:
        lead = belief.shape[:-1]
        return self.actor(belief), self.critic(belief).reshape(*lead)

    # -- batched sequence evaluation ---------------------------------------
    def unroll(self, obs: np.ndarray, prev_actions: np.ndarray, starts: np.ndarray,
               state: dict[str, np.ndarray]) -> PolicyOutput:
        """Evaluate a (T, B) block.

        ``prev_actions[t, b]`` is the action executed just before ``obs[t, b]``
        (ignored where ``starts[t, b]``, which marks the first observation of
        an episode and resets all recurrent state).
        """
        obs = np.asarray(obs)
        if obs.ndim != 3 or obs.shape[-1] != self.task.obs_dim:
            raise ShapeError("unroll obs", obs.shape, (self.task.obs_dim,))
        T, B = obs.shape[:2]
        starts = np.asarray(starts, dtype=bool)
        prev_actions = np.asarray(prev_actions)
        if starts.shape != (T, B) or prev_actions.shape != (T, B):
            raise ShapeError("unroll", obs.shape, starts.shape, prev_actions.shape)
        feat, goal = self.task.features(obs)
        h, r, g = self.encode_state(_const(feat), _const(goal))
        new_state = {"prev_feat": feat[-1].copy()}

        emb_all = None
        if self.encoder_kind == "impact":
            prev_feat = np.concatenate([state["prev_feat"][None], feat[:-1]], axis=0)
            prev_feat = np.where(starts[..., None], feat, prev_feat)
            r_prev = self.state_mlp(_const(prev_feat))
            f = self.extract_state_change(r, r_prev, g)
            f_proj = self.memory_gru.project_input(f)
            cold = self.cold_embedding()
            # memory updates: regular actions only, never across an episode start
            upd = np.where(starts | (prev_actions < 0) | (prev_actions >= self.task.n_regular),
                           -1, prev_actions)
            bank = _const(state["bank"])
            visited = state["visited"]
            per_step = []
            for t in range(T):
                if starts[t].any():
                    keep = (~starts[t]).astype(np.float32)
                    bank = bank * _const(keep[:, None, None])
                    visited = visited * keep[:, None]
                bank, visited = self.update_action_impact(f_proj[t], upd[t], bank, visited)
                per_step.append(self.embeddings(bank, visited, cold))
            new_state["bank"] = bank.data.copy()
            new_state["visited"] = visited.copy()
            emb_regular = dc.stack(per_step, axis=0)  # (T, B, n_regular, H)
            emb_all = self.register_special(emb_regular)
        elif self.encoder_kind == "semantics":
            ones = _const(np.ones((T, B, 1, 1)))
            emb_all = ones * self.action_table.reshape(1, 1, *self.action_table.shape)
            emb_regular = emb_all[:, :, :self.task.n_regular]

        predictions = None
        if self.has_forward_head:
            predictions = self.forward_head(emb_regular)

        if self.model_based:
            pe = dc.tanh(self.prediction_embed(predictions))
            belief_in = dc.concat([h, pe.reshape(T, B, -1)], axis=-1)
        elif emb_all is not None:
            belief_in = dc.concat([h, emb_all.reshape(T, B, -1)], axis=-1)
        else:
            belief_in = h
        xb = self.belief_gru.project_input(belief_in)
        b = _const(state["belief"])
        beliefs = []
        for t in range(T):
            if starts[t].any():
                b = b * _const((~starts[t]).astype(np.float32)[:, None])
            b = self.belief_gru.step_projected(xb[t], b)
            beliefs.append(b)
        new_state["belief"] = b.data.copy()
        belief = dc.stack(beliefs, axis=0)

        if self.head_kind == "oi":
            logits, values = self.oi_head(emb_all, belief)
        else:
            logits, values = self.linear_head(belief)
        if "bank" not in new_state:
            new_state["bank"] = state["bank"].copy()
            new_state["visited"] = state["visited"].copy()
        return PolicyOutput(logits, values, predictions, new_state)

    def policy_step(self, obs: np.ndarray, prev_action: np.ndarray, start: np.ndarray,
                    state: dict[str, np.ndarray]) -> PolicyOutput:
        """One step for a batch of B environments (T=1 slice of :meth:`unroll`)."""
        out = self.unroll(np.asarray(obs)[None], np.asarray(prev_action)[None],
                          np.asarray(start)[None], state)
        return PolicyOutput(out.logits[0], out.values[0],
                            None if out.predictions is None else out.predictions[0], out.state)


def baseline_policies(variant: str, task: TaskSpec, dims: ModelDims | None = None,
                      seed: int = 0) -> ActionPolicy:
    """Construct a policy variant by name (see :data:`VARIANTS`)."""
    return ActionPolicy(task, variant, dims, seed)


def slice_state(state: dict[str, np.ndarray], idx) -> dict[str, np.ndarray]:
    return {k: v[idx].copy() for k, v in state.items()}


def probabilities(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling, one uniform draw per row."""
    p = probabilities(logits.astype(np.float64))
    c = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[:-1])[..., None] * c[..., -1:]
    return np.minimum((c < u).sum(axis=-1), p.shape[-1] - 1)


def log_prob_of(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    return np.take_along_axis(z, actions[..., None], axis=-1)[..., 0] - lse
