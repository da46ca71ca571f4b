"""Leader/follower networks, distillation losses and the curiosity module.

The global guiding network (GGN) sees a per-agent personalized view of the
global state and is trained on the team TD error. The local policy network
(LPN) has the same layout but only ever reads local features; it learns by
matching the GGN's block outputs, Q-distributions and hidden MLP features.
The internal distillation module (IDM) turns the prediction error of a
trainable network against a frozen random one into an exploration bonus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .networks import (
    MLP,
    AgentNetwork,
    FusionBlock,
    Module,
    ObservationBlock,
    make_mixer,
    unroll_agent,
)
from .numerics import Tensor
from .replay import EpisodeBatch

STATE_MODES = ("personalized", "raw", "local")
KD_TERMS = ("L_B", "L_Q", "L_F")


@dataclass(frozen=True)
class NetworkSizes:
    agent_hidden: int = 64
    fusion_dim: int = 32
    generator_hidden: int = 64
    mixing_dim: int = 32
    hyper_dim: int = 64
    idm_hidden: int = 64
    idm_out: int = 64


def local_dim(obs_dim: int, n_actions: int, n_agents: int) -> int:
    return obs_dim + n_actions + n_agents


class GGN(Module):
    """Agent network fed by the fusion block, plus the mixer.

    ``state_mode`` selects the agent input: ``personalized`` (fusion block),
    ``raw`` (global state concatenated with local features) or ``local``
    (local features only, i.e. a plain value-decomposition learner).
    """

    def __init__(
        self,
        n_agents: int,
        obs_dim: int,
        state_dim: int,
        n_actions: int,
        rng: np.random.Generator,
        mixer: str = "vdn",
        state_mode: str = "personalized",
        sizes: NetworkSizes = NetworkSizes(),
    ):
        if state_mode not in STATE_MODES:
            raise ValueError(f"state_mode must be one of {STATE_MODES}, got {state_mode!r}")
        self.n_agents, self.obs_dim, self.state_dim, self.n_actions = n_agents, obs_dim, state_dim, n_actions
        self.state_mode = state_mode
        ld = local_dim(obs_dim, n_actions, n_agents)
        self.fusion = None
        if state_mode == "personalized":
            self.fusion = FusionBlock(ld, state_dim, sizes.fusion_dim, rng, sizes.generator_hidden)
            self.feature_dim = sizes.fusion_dim
        elif state_mode == "raw":
            self.feature_dim = state_dim + ld
        else:
            self.feature_dim = ld
        self.agent = AgentNetwork(self.feature_dim, n_actions, rng, sizes.agent_hidden)
        self.mixer = make_mixer(mixer, n_agents, state_dim, rng, mixing_dim=sizes.mixing_dim, hyper_dim=sizes.hyper_dim)

    @property
    def uses_state(self) -> bool:
        return self.state_mode != "local"

    def features(self, local, state) -> Tensor:
        """Rows of local features (and matching global states) -> agent input."""
        if self.state_mode == "personalized":
            return self.fusion(local, state)
        if self.state_mode == "raw":
            return nx.concat([nx.tensor(state), nx.tensor(local)], axis=-1)
        return local if isinstance(local, Tensor) else nx.tensor(local)

    def act(self, local: np.ndarray, state: np.ndarray | None, h: np.ndarray):
        """One decision step for n agents: returns (q (n, U), h_next)."""
        with nx.no_grad():
            s = np.broadcast_to(state, (local.shape[0], self.state_dim)) if self.uses_state else None
            q, h_next, _ = self.agent(self.features(local, s), h)
        return q.data, h_next.data


class LPN(Module):
    """Observation block + agent network; reads local features only."""

    def __init__(
        self,
        n_agents: int,
        obs_dim: int,
        state_dim: int,
        n_actions: int,
        feature_dim: int,
        rng: np.random.Generator,
        sizes: NetworkSizes = NetworkSizes(),
    ):
        self.n_agents, self.n_actions = n_agents, n_actions
        ld = local_dim(obs_dim, n_actions, n_agents)
        self.observation = ObservationBlock(ld, state_dim, feature_dim, rng, sizes.generator_hidden)
        self.agent = AgentNetwork(feature_dim, n_actions, rng, sizes.agent_hidden)

    def act(self, local: np.ndarray, state, h: np.ndarray):
        with nx.no_grad():
            q, h_next, _ = self.agent(self.observation(local), h)
        return q.data, h_next.data


def build_lpn(ggn: GGN, rng: np.random.Generator, sizes: NetworkSizes = NetworkSizes()) -> LPN:
    lpn = LPN(ggn.n_agents, ggn.obs_dim, ggn.state_dim, ggn.n_actions, ggn.feature_dim, rng, sizes)
    if lpn.observation.out_dim != ggn.feature_dim:
        raise ValueError("observation block width must equal the GGN feature width")
    return lpn


# ---------------------------------------------------------------------------
# forward passes over episode batches


@dataclass
class GGNOutputs:
    features: Tensor  # (B, L+1, n, d)   personalized state per agent
    f_mid: Tensor  # (B, L+1, n, H)      agent MLP features
    q: Tensor  # (B, L+1, n, U)
    q_tot: Tensor  # (B, L)              mixer output for the taken actions
    hidden: Tensor  # (B*n, H) after the last step


@dataclass
class LPNOutputs:
    features: Tensor
    f_mid: Tensor
    q: Tensor
    hidden: Tensor


def _chosen(q: Tensor, actions: np.ndarray, n_actions: int) -> Tensor:
    L = actions.shape[1]
    return nx.gather(q[:, :L], np.clip(actions, 0, n_actions - 1))


def ggn_forward(batch: EpisodeBatch, ggn: GGN) -> GGNOutputs:
    if ggn.uses_state and batch.states is None:
        raise ValueError("GGN forward needs the global state in the batch")
    local = batch.local_features()
    B, L1, n, ld = local.shape
    rows = B * L1 * n
    state_rows = None
    if ggn.uses_state:
        state_rows = np.broadcast_to(batch.states[:, :, None, :], (B, L1, n, ggn.state_dim)).reshape(rows, -1)
    feats = ggn.features(local.reshape(rows, ld), state_rows)
    q, f_mid, h = unroll_agent(ggn.agent, feats, (B, L1, n))
    q_tot = ggn.mixer(_chosen(q, batch.actions, ggn.n_actions), batch.states[:, :-1] if batch.states is not None else None)
    return GGNOutputs(nx.reshape(feats, (B, L1, n, ggn.feature_dim)), f_mid, q, q_tot, h)


def lpn_forward(batch: EpisodeBatch, lpn: LPN) -> LPNOutputs:
    local = batch.local_features()  # obs, previous actions, ids; never the state
    B, L1, n, ld = local.shape
    feats = lpn.observation(local.reshape(B * L1 * n, ld))
    q, f_mid, h = unroll_agent(lpn.agent, feats, (B, L1, n))
    return LPNOutputs(nx.reshape(feats, (B, L1, n, lpn.observation.out_dim)), f_mid, q, h)


def target_next_q_tot(batch: EpisodeBatch, target: GGN) -> np.ndarray:
    """max over joint actions of the target Q_tot at t+1, shape (B, L).

    Per-agent maxima are taken before mixing; for monotone mixers this is
    the joint maximum.
    """
    with nx.no_grad():
        out = ggn_forward(batch, target)
        q_next_max = nx.amax(out.q[:, 1:], axis=-1)
        states_next = batch.states[:, 1:] if batch.states is not None else None
        return target.mixer(q_next_max, states_next).data


# ---------------------------------------------------------------------------
# losses


def _masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    denom = max(float(mask.sum()), 1.0)
    return nx.sum(x * mask) / denom


def td_loss(q_tot, target_next, r_tot, terminated, mask, gamma: float) -> Tensor:
    """Masked mean of (r + γ(1-term)·target' - Q_tot)² with the target held constant."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    q_tot = q_tot if isinstance(q_tot, Tensor) else nx.tensor(q_tot)
    y = np.asarray(r_tot) + gamma * (1.0 - np.asarray(terminated)) * np.asarray(target_next)
    err = q_tot - y
    return _masked_mean(nx.square(err), np.asarray(mask, dtype=np.float64))


def compute_global_loss(batch: EpisodeBatch, ggn_out: GGNOutputs, target_next: np.ndarray, r_tot, gamma: float = 0.99) -> Tensor:
    return td_loss(ggn_out.q_tot, target_next, r_tot, batch.terminated, batch.mask, gamma)


def _softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def kl_to_teacher(teacher_logits: np.ndarray, student_logits: Tensor, temperature: float = 1.0) -> Tensor:
    """KL(softmax(teacher/T) || softmax(student/T)) over the last axis."""
    p = _softmax_np(np.asarray(teacher_logits) / temperature)
    log_p = np.log(np.clip(p, 1e-300, None))
    log_q = nx.log_softmax(student_logits * (1.0 / temperature))
    return nx.sum(nx.mul(p, log_p - log_q), axis=-1)


@dataclass
class KDLosses:
    L_B: Tensor
    L_Q: Tensor
    L_F: Tensor
    L_local: Tensor

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("L_B", "L_Q", "L_F", "L_local")}


def compute_kd_losses(
    ggn_out: GGNOutputs,
    lpn_out: LPNOutputs,
    mask: np.ndarray,
    temperature: float = 1.0,
    weights: dict[str, float] | None = None,
    terms=KD_TERMS,
) -> KDLosses:
    """Block, Q-value and feature distillation, averaged over valid steps.

    The teacher side is read as plain arrays, so no gradient reaches the GGN.
    """
    for name in ("features", "f_mid", "q"):
        a, b = getattr(ggn_out, name), getattr(lpn_out, name)
        if a.shape != b.shape:
            raise ValueError(f"GGN/LPN {name} shapes differ: {a.shape} vs {b.shape}")
    weights = {k: 1.0 for k in KD_TERMS} | (weights or {})
    mask = np.asarray(mask, dtype=np.float64)
    L = mask.shape[1]
    # block loss: mean over agents and feature dims of the squared gap
    gap = lpn_out.features[:, :L] - ggn_out.features.data[:, :L]
    l_b = _masked_mean(nx.mean(nx.square(gap), axis=(2, 3)), mask)
    # KL terms: summed over agents
    l_q = _masked_mean(nx.sum(kl_to_teacher(ggn_out.q.data[:, :L], lpn_out.q[:, :L], temperature), axis=-1), mask)
    l_f = _masked_mean(nx.sum(kl_to_teacher(ggn_out.f_mid.data[:, :L], lpn_out.f_mid[:, :L], 1.0), axis=-1), mask)
    parts = {"L_B": l_b, "L_Q": l_q, "L_F": l_f}
    active = [weights[k] * parts[k] for k in KD_TERMS if k in terms]
    total = active[0]
    for extra in active[1:]:
        total = total + extra
    return KDLosses(l_b, l_q, l_f, total)


# ---------------------------------------------------------------------------
# internal distillation module


class RunningMeanStd(Module):
    def __init__(self, dim: int):
        self.mean = nx.tensor(np.zeros(dim))
        self.var = nx.tensor(np.ones(dim))
        self.count = nx.tensor(np.array([1e-4]))

    def update(self, x: np.ndarray) -> None:
        if len(x) == 0:
            return
        b_mean, b_var, b_n = x.mean(axis=0), x.var(axis=0), float(len(x))
        n = float(self.count.data[0])
        delta = b_mean - self.mean.data
        tot = n + b_n
        m2 = self.var.data * n + b_var * b_n + delta**2 * n * b_n / tot
        self.mean.data = self.mean.data + delta * b_n / tot
        self.var.data = m2 / tot
        self.count.data = np.array([tot])

    def normalize(self, x: np.ndarray, clip: float = 5.0) -> np.ndarray:
        return np.clip((x - self.mean.data) / np.sqrt(self.var.data + 1e-8), -clip, clip)


class IDM(Module):
    """Frozen random target network and trainable predictor over the state."""

    def __init__(
        self,
        state_dim: int,
        rng: np.random.Generator,
        mu: float = 0.75,
        scale: float = 1.0,
        hidden: int = 64,
        out_dim: int = 64,
        normalize: bool = True,
    ):
        if not 0.0 <= mu <= 1.0:
            raise ValueError(f"mask probability mu must lie in [0, 1], got {mu}")
        self.state_dim, self.mu, self.scale, self.normalize = state_dim, float(mu), float(scale), normalize
        self.target = MLP(state_dim, [hidden], out_dim, rng).freeze()
        self.predictor = MLP(state_dim, [hidden], out_dim, rng)
        self.stats = RunningMeanStd(state_dim)

    def prepare(self, states: np.ndarray) -> np.ndarray:
        return self.stats.normalize(states) if self.normalize else np.asarray(states, dtype=np.float64)


def idm_intrinsic_reward(
    states: np.ndarray,
    idm: IDM,
    rng: np.random.Generator,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, Tensor]:
    """Per-row bonus ``scale * m * err`` with ``m ~ Bernoulli(mu)`` and the
    predictor's training loss (mean error over valid rows)."""
    if not 0.0 <= idm.mu <= 1.0:
        raise ValueError(f"mask probability mu must lie in [0, 1], got {idm.mu}")
    x = idm.prepare(np.asarray(states, dtype=np.float64))
    with nx.no_grad():
        target = idm.target(x).data
    err = nx.mean(nx.square(idm.predictor(x) - target), axis=-1)  # (N,)
    keep = rng.random(len(x)) < idm.mu
    r_i = idm.scale * keep * err.data
    w = np.ones(len(x)) if mask is None else np.asarray(mask, dtype=np.float64)
    return r_i, _masked_mean(err, w)


def total_reward(r, r_i):
    return r + r_i


# ---------------------------------------------------------------------------
# bundle


class DDNModel(Module):
    """Everything trained together: GGN (+ target), LPN and IDM.

    With ``ddn=False`` only ``ggn`` (in ``local`` mode) exists and it doubles
    as the executing policy.
    """

    def __init__(
        self,
        n_agents: int,
        obs_dim: int,
        state_dim: int,
        n_actions: int,
        rng: np.random.Generator,
        mixer: str = "vdn",
        ddn: bool = True,
        personalized: bool = True,
        idm: bool = True,
        mu: float = 0.75,
        intrinsic_scale: float = 1.0,
        normalize_idm: bool = True,
        sizes: NetworkSizes = NetworkSizes(),
    ):
        mode = ("personalized" if personalized else "raw") if ddn else "local"
        self.ddn = ddn
        self.ggn = GGN(n_agents, obs_dim, state_dim, n_actions, rng, mixer=mixer, state_mode=mode, sizes=sizes)
        self.lpn = build_lpn(self.ggn, rng, sizes) if ddn else None
        self.idm = (
            IDM(state_dim, rng, mu=mu, scale=intrinsic_scale, hidden=sizes.idm_hidden, out_dim=sizes.idm_out, normalize=normalize_idm)
            if ddn and idm
            else None
        )
        self.target_ggn = self.ggn.clone()

    def policy(self, which: str):
        if which == "ggn" or not self.ddn:
            return self.ggn
        if which == "lpn":
            return self.lpn
        raise ValueError(f"unknown policy {which!r}")
