"""Network building blocks: MLP, GRU cell, fusion/observation blocks, agent net, mixers."""

from __future__ import annotations

import copy
from typing import Iterator, Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor


class Module:
    """Parameter container. Attributes that are Tensors or Modules (or lists of
    them) are walked in definition order to produce dotted names; tensors with
    ``requires_grad=False`` count as frozen state, not trainable parameters."""

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_tensors(prefix + key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{prefix}{key}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{prefix}{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        return ((k, t) for k, t in self.named_tensors(prefix) if t.requires_grad)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def freeze(self) -> "Module":
        for _, t in self.named_tensors():
            t.requires_grad = False
            t.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_tensors())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def copy_from(self, other: "Module") -> None:
        self.load_state_dict(other.state_dict())

    def clone(self) -> "Module":
        twin = copy.deepcopy(self)
        for _, t in twin.named_tensors():
            t.grad = None
        return twin

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = nx.parameter(_uniform(rng, in_dim, (out_dim, in_dim)))
        self.bias = nx.parameter(_uniform(rng, in_dim, (out_dim,)))

    def __call__(self, x) -> Tensor:
        return nx.linear(x, self.weight, self.bias)


# ---------------------------------------------------------------------------
# MLP


class MLP(Module):
    """Chain of affine layers; ``activations[k]`` follows layer ``k``."""

    def __init__(
        self,
        in_dim: int,
        hidden: Sequence[int],
        out_dim: int,
        rng: np.random.Generator,
        activation: str = "relu",
        out_activation: str | None = None,
    ):
        dims = [in_dim, *hidden, out_dim]
        self.in_dim, self.out_dim = in_dim, out_dim
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.activations = [activation] * len(hidden) + [out_activation]

    def __call__(self, x) -> Tensor:
        return mlp_forward(self, x)


def mlp_forward(params: MLP, x) -> Tensor:
    x = nx.tensor(x) if not isinstance(x, Tensor) else x
    if x.shape[-1] != params.in_dim:
        raise ValueError(f"MLP expects input width {params.in_dim}, got {x.shape[-1]}")
    for layer, act in zip(params.layers, params.activations):
        x = nx.apply_activation(layer(x), act)
    return x


# ---------------------------------------------------------------------------
# GRU


class GRUCell(Module):
    """Gate matrices act on the concatenation ``[x; h]`` and are stored (H, in+H)."""

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.in_dim, self.hidden_dim = in_dim, hidden_dim
        fan = in_dim + hidden_dim
        shape = (hidden_dim, fan)
        self.w_z = nx.parameter(_uniform(rng, hidden_dim, shape))
        self.w_r = nx.parameter(_uniform(rng, hidden_dim, shape))
        self.w_h = nx.parameter(_uniform(rng, hidden_dim, shape))
        self.b_z = nx.parameter(_uniform(rng, hidden_dim, (hidden_dim,)))
        self.b_r = nx.parameter(_uniform(rng, hidden_dim, (hidden_dim,)))
        self.b_h = nx.parameter(_uniform(rng, hidden_dim, (hidden_dim,)))

    def __call__(self, x, h) -> Tensor:
        return gru_step(self, x, h)


def gru_step(params: GRUCell, x, h) -> Tensor:
    """z = σ(Wz[x;h]+bz), r = σ(Wr[x;h]+br), h~ = tanh(Wh[x; r*h]+bh),
    h' = (1-z)*h + z*h~."""
    x = x if isinstance(x, Tensor) else nx.tensor(x)
    h = h if isinstance(h, Tensor) else nx.tensor(h)
    if x.shape[-1] != params.in_dim or h.shape[-1] != params.hidden_dim or x.shape[0] != h.shape[0]:
        raise ValueError(
            f"GRU expects x (*, {params.in_dim}) and h (*, {params.hidden_dim}); got {x.shape} and {h.shape}"
        )
    xh = nx.concat([x, h], axis=-1)
    z = nx.sigmoid(nx.linear(xh, params.w_z, params.b_z))
    r = nx.sigmoid(nx.linear(xh, params.w_r, params.b_r))
    cand = nx.tanh(nx.linear(nx.concat([x, r * h], axis=-1), params.w_h, params.b_h))
    return (1.0 - z) * h + z * cand


def gru_unroll(params: GRUCell, xs: Tensor, h0) -> list[Tensor]:
    """Run ``gru_step`` over ``xs`` of shape (B, L, n, in); returns L hidden
    states of shape (B*n, H).

    Same equations as :func:`gru_step`. The input halves of the three gate
    matrices are applied to every timestep in one matmul, and the z/r
    recurrent products share one matmul per step.
    """
    B, L, n, d = xs.shape
    H = params.hidden_dim
    if d != params.in_dim:
        raise ValueError(f"GRU expects input width {params.in_dim}, got {d}")
    w_x = nx.concat([params.w_z[:, :d], params.w_r[:, :d], params.w_h[:, :d]], axis=0)
    b_x = nx.concat([params.b_z, params.b_r, params.b_h], axis=0)
    gx = nx.reshape(nx.linear(nx.reshape(xs, (B * L * n, d)), w_x, b_x), (B, L, n, 3 * H))
    w_zr = nx.concat([params.w_z[:, d:], params.w_r[:, d:]], axis=0)
    w_hh = params.w_h[:, d:]
    h = h0 if isinstance(h0, Tensor) else nx.tensor(h0)
    out = []
    for t in range(L):
        g = nx.reshape(gx[:, t], (B * n, 3 * H))
        zr = nx.sigmoid(g[:, : 2 * H] + nx.linear(h, w_zr))
        z, r = zr[:, :H], zr[:, H:]
        cand = nx.tanh(g[:, 2 * H :] + nx.linear(r * h, w_hh))
        h = (1.0 - z) * h + z * cand
        out.append(h)
    return out


# ---------------------------------------------------------------------------
# personalization blocks


class FusionBlock(Module):
    """Generator MLP turning local features into a per-row (W, B) that maps the
    global state to a ``d``-dimensional personalized feature."""

    def __init__(
        self,
        local_dim: int,
        state_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        hidden: int = 64,
    ):
        self.local_dim, self.state_dim, self.out_dim = local_dim, state_dim, out_dim
        self.generator = MLP(local_dim, [hidden], state_dim * out_dim + out_dim, rng)

    def transform(self, local) -> tuple[Tensor, Tensor]:
        """Return W (batch, state_dim, d) and B (batch, d)."""
        local = local if isinstance(local, Tensor) else nx.tensor(local)
        if local.shape[-1] != self.local_dim:
            raise ValueError(f"expected local width {self.local_dim}, got {local.shape[-1]}")
        raw = mlp_forward(self.generator, local)
        n_w = self.state_dim * self.out_dim
        w = nx.reshape(raw[:, :n_w], (raw.shape[0], self.state_dim, self.out_dim))
        b = raw[:, n_w:]
        return w, b

    def __call__(self, local, state) -> Tensor:
        return fusion_block_forward(self, local, state)


def fusion_block_forward(params: FusionBlock, local, state) -> Tensor:
    state = state if isinstance(state, Tensor) else nx.tensor(state)
    if state.shape[-1] != params.state_dim:
        raise ValueError(f"expected state width {params.state_dim}, got {state.shape[-1]}")
    w, b = params.transform(local)
    if state.shape[0] != w.shape[0]:
        raise ValueError(f"state batch {state.shape[0]} != local batch {w.shape[0]}")
    return nx.rowwise_matvec(state, w) + b


class ObservationBlock(FusionBlock):
    """Same generator layout as :class:`FusionBlock`; a learned state-shaped
    vector ``base`` stands in for the global state, so the block only ever
    reads local features."""

    def __init__(self, local_dim: int, state_dim: int, out_dim: int, rng: np.random.Generator, hidden: int = 64):
        super().__init__(local_dim, state_dim, out_dim, rng, hidden)
        self.base = nx.parameter(rng.uniform(0.0, 1.0, size=state_dim))

    def __call__(self, local) -> Tensor:
        return observation_block_forward(self, local)


def observation_block_forward(params: ObservationBlock, local) -> Tensor:
    w, b = params.transform(local)
    rows = w.shape[0]
    # broadcast the shared base vector over rows
    base = nx.mul(nx.tensor(np.ones((rows, 1))), nx.reshape(params.base, (1, params.state_dim)))
    return nx.rowwise_matvec(base, w) + b


# ---------------------------------------------------------------------------
# agent network


class AgentNetwork(Module):
    """features -> MLP (f_mid) -> GRU -> linear Q-head."""

    def __init__(self, in_dim: int, n_actions: int, rng: np.random.Generator, hidden_dim: int = 64):
        self.in_dim, self.n_actions, self.hidden_dim = in_dim, n_actions, hidden_dim
        self.fc = Linear(in_dim, hidden_dim, rng)
        self.gru = GRUCell(hidden_dim, hidden_dim, rng)
        self.head = Linear(hidden_dim, n_actions, rng)

    def init_hidden(self, rows: int) -> np.ndarray:
        return np.zeros((rows, self.hidden_dim))

    def features(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else nx.tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"agent network expects width {self.in_dim}, got {x.shape[-1]}")
        return nx.relu(self.fc(x))

    def __call__(self, features, h):
        return agent_forward(self, features, h)


def agent_forward(agent: AgentNetwork, features, h) -> tuple[Tensor, Tensor, Tensor]:
    """One step: returns (q, h_next, f_mid)."""
    f_mid = agent.features(features)
    h_next = gru_step(agent.gru, f_mid, h)
    return agent.head(h_next), h_next, f_mid


def unroll_agent(agent: AgentNetwork, features: Tensor, lead_shape: tuple[int, int, int]):
    """Run the agent net over a (B, L, n, feat) block of features.

    The time-independent MLP runs on all rows at once; only the GRU loops.
    Returns q (B, L, n, U), f_mid (B, L, n, H), final hidden (B*n, H).
    """
    B, L, n = lead_shape
    f_mid = agent.features(features)  # (B*L*n, H)
    f4 = nx.reshape(f_mid, (B, L, n, agent.hidden_dim))
    hs = gru_unroll(agent.gru, f4, agent.init_hidden(B * n))
    h = hs[-1]
    h_all = nx.stack([nx.reshape(x, (B, n, agent.hidden_dim)) for x in hs], axis=1)  # (B, L, n, H)
    q = agent.head(h_all)
    return q, f4, h


# ---------------------------------------------------------------------------
# mixers


def vdn_mix(q_chosen) -> Tensor:
    """Q_tot = sum over the agent axis (last)."""
    return nx.sum(q_chosen, axis=-1)


class QMixer(Module):
    kind = "qmix"

    def __init__(
        self,
        n_agents: int,
        state_dim: int,
        rng: np.random.Generator,
        mixing_dim: int = 32,
        hyper_dim: int = 64,
        activation: str = "elu",
    ):
        self.n_agents, self.state_dim, self.mixing_dim = n_agents, state_dim, mixing_dim
        self.activation = activation
        self.hyper_w1 = MLP(state_dim, [hyper_dim], n_agents * mixing_dim, rng)
        self.hyper_b1 = Linear(state_dim, mixing_dim, rng)
        self.hyper_w2 = MLP(state_dim, [hyper_dim], mixing_dim, rng)
        self.hyper_b2 = MLP(state_dim, [mixing_dim], 1, rng)

    def __call__(self, q_chosen, state) -> Tensor:
        return qmix_mix(q_chosen, state, self)


class VDNMixer(Module):
    kind = "vdn"

    def __call__(self, q_chosen, state=None) -> Tensor:
        return vdn_mix(q_chosen)


def qmix_mix(q_chosen, state, params: QMixer) -> Tensor:
    """|w2(s)|ᵀ act(|W1(s)| q + b1(s)) + b2(s) for rows of (q, s)."""
    if getattr(params, "kind", None) != "qmix":
        raise TypeError(f"qmix_mix needs QMixer params, got {type(params).__name__}")
    q = q_chosen if isinstance(q_chosen, Tensor) else nx.tensor(q_chosen)
    s = state if isinstance(state, Tensor) else nx.tensor(state)
    lead = q.shape[:-1]
    rows = int(np.prod(lead)) if lead else 1
    if q.shape[-1] != params.n_agents:
        raise ValueError(f"expected {params.n_agents} agent values, got {q.shape[-1]}")
    q = nx.reshape(q, (rows, params.n_agents))
    s = nx.reshape(s, (rows, params.state_dim))
    w1 = nx.reshape(nx.absolute(params.hyper_w1(s)), (rows, params.n_agents, params.mixing_dim))
    b1 = params.hyper_b1(s)
    hidden = nx.apply_activation(nx.rowwise_matvec(q, w1) + b1, params.activation)
    w2 = nx.absolute(params.hyper_w2(s))
    b2 = params.hyper_b2(s)
    out = nx.sum(hidden * w2, axis=-1) + nx.reshape(b2, (rows,))
    return nx.reshape(out, lead)


def make_mixer(kind: str, n_agents: int, state_dim: int, rng: np.random.Generator, **kw) -> Module:
    if kind == "vdn":
        return VDNMixer()  # parameter-free; sizing kwargs do not apply
    if kind == "qmix":
        return QMixer(n_agents, state_dim, rng, **kw)
    raise ValueError(f"unknown mixer {kind!r}; choose vdn or qmix")
