"""Rollouts, the three-network update cycle, target sync and evaluation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .ddn import (
    DDNModel,
    NetworkSizes,
    compute_global_loss,
    compute_kd_losses,
    ggn_forward,
    idm_intrinsic_reward,
    lpn_forward,
    target_next_q_tot,
    total_reward,
)
from .env import N_ACTIONS, GridWorldConfig, PredatorPrey
from .replay import Episode, EpisodeBatch, ReplayBuffer

LOSS_KEYS = ("L_global", "L_B", "L_Q", "L_F", "L_I", "mean_r_I")


@dataclass
class ScheduleState:
    eps_start: float = 1.0
    eps_end: float = 0.05
    anneal_steps: int = 50_000

    def __call__(self, step: int) -> float:
        return epsilon(step, self.eps_start, self.eps_end, self.anneal_steps)


def epsilon(step: int, start: float = 1.0, end: float = 0.05, anneal_steps: int = 50_000) -> float:
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if anneal_steps <= 0:
        return end
    return max(end, start - (start - end) * step / anneal_steps)


def local_inputs(obs: np.ndarray, prev_actions: np.ndarray, n_actions: int) -> np.ndarray:
    """Per-agent rows of [observation, previous action one-hot, id one-hot]."""
    n = obs.shape[0]
    prev = np.zeros((n, n_actions))
    has_prev = prev_actions >= 0
    prev[np.arange(n)[has_prev], prev_actions[has_prev]] = 1.0
    return np.concatenate([obs, prev, np.eye(n)], axis=1)


def select_actions(q: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    """ε-greedy per agent; ties go to the lowest action index."""
    greedy = np.argmax(q, axis=-1)
    explore = rng.random(len(q)) < eps
    random_actions = rng.integers(q.shape[-1], size=len(q))
    return np.where(explore, random_actions, greedy)


@dataclass
class EpisodeStats:
    episode_return: float
    length: int
    captures: int
    capture_rate: float


def run_episode(
    env: PredatorPrey,
    model: DDNModel,
    eps: float,
    rng: np.random.Generator,
    mode: str = "train",
    policy: str | None = None,
    seed: int | None = None,
) -> tuple[Episode, EpisodeStats]:
    """Roll out one episode.

    ``mode="train"`` acts with the GGN (which may read the state);
    ``mode="eval"`` forces ε=0 and acts with the LPN, which never sees it.
    ``policy`` overrides the network choice ("ggn" or "lpn").
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval":
        eps = 0.0
    net = model.policy(policy or ("ggn" if mode == "train" else "lpn"))
    if seed is None:
        seed = int(rng.integers(2**31 - 1))
    _, obs = env.reset(seed)
    n = env.n_agents
    h = net.agent.init_hidden(n)
    prev = -np.ones(n, dtype=np.int64)
    states, observations, actions, rewards, terminated = [env.encode_state()], [obs], [], [], []
    captures = 0
    done = False
    while not done:
        local = local_inputs(obs, prev, N_ACTIONS)
        q, h = net.act(local, states[-1], h)
        a = select_actions(q, eps, rng)
        _, obs, r, done, info = env.step(a)
        captures += info.captures
        states.append(env.encode_state())
        observations.append(obs)
        actions.append(a)
        rewards.append(r)
        terminated.append(info.terminated)
        prev = a
    ep = Episode(
        states=np.asarray(states),
        obs=np.asarray(observations),
        actions=np.asarray(actions, dtype=np.int64),
        rewards=np.asarray(rewards, dtype=np.float64),
        terminated=np.asarray(terminated, dtype=bool),
    )
    stats = EpisodeStats(float(ep.rewards.sum()), len(ep), captures, captures / env.config.n_prey)
    return ep, stats


def sync_target(model: DDNModel, step: int, interval: int, prev_step: int | None = None) -> bool:
    """Copy GGN (+mixer) parameters into the target network.

    Called once per environment step, syncs when ``step % interval == 0``.
    With ``prev_step`` (episode-granular callers) it syncs when a multiple of
    ``interval`` lies in ``(prev_step, step]``.
    """
    if interval <= 0:
        raise ValueError(f"interval must be > 0, got {interval}")
    due = step % interval == 0 if prev_step is None else step // interval > prev_step // interval
    if due:
        model.target_ggn.copy_from(model.ggn)
    return due


def fingerprint(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


@dataclass
class TrainSettings:
    lr: float = 5e-4
    gamma: float = 0.99
    rms_decay: float = 0.99
    rms_eps: float = 1e-5
    grad_clip: float = 10.0
    batch_size: int = 32
    buffer_capacity: int = 5000
    target_interval: int = 200
    temperature: float = 1.0
    kd_terms: tuple[str, ...] = ("L_B", "L_Q", "L_F")
    kd_weights: dict = field(default_factory=lambda: {"L_B": 1.0, "L_Q": 1.0, "L_F": 1.0})


class Learner:
    """Owns the optimizers and performs one update cycle per call."""

    def __init__(self, model: DDNModel, settings: TrainSettings, rng: np.random.Generator):
        self.model = model
        self.settings = settings
        self.rng = rng
        s = settings
        self.ggn_opt = nx.RMSprop(model.ggn.parameters(), lr=s.lr, decay=s.rms_decay, eps=s.rms_eps)
        self.lpn_opt = nx.Adam(model.lpn.parameters(), lr=s.lr) if model.lpn is not None else None
        self.idm_opt = nx.Adam(model.idm.predictor.parameters(), lr=s.lr) if model.idm is not None else None
        self.train_steps = 0
        self.update_log: list[str] = []

    def train_step(self, buffer: ReplayBuffer) -> dict[str, float] | None:
        """Sample a batch and update GGN, then LPN, then IDM.

        Returns ``None`` (and changes nothing) while the buffer holds no more
        than ``batch_size`` episodes.
        """
        s = self.settings
        if not buffer.can_sample(s.batch_size):
            return None
        batch = buffer.sample(s.batch_size, self.rng, N_ACTIONS)
        return self.update(batch)

    def update(self, batch: EpisodeBatch) -> dict[str, float]:
        s, m = self.settings, self.model
        report = dict.fromkeys(LOSS_KEYS, float("nan"))
        self.update_log = []

        # intrinsic reward from the current predictor
        r_i = np.zeros_like(batch.rewards)
        loss_i = None
        if m.idm is not None:
            B, L = batch.mask.shape
            valid = batch.mask.reshape(-1) > 0
            flat_states = batch.states[:, :L].reshape(B * L, -1)
            m.idm.stats.update(flat_states[valid])
            r_flat, loss_i = idm_intrinsic_reward(flat_states, m.idm, self.rng, mask=batch.mask.reshape(-1))
            r_i = r_flat.reshape(B, L) * batch.mask
            report["mean_r_I"] = float(r_i.sum() / max(batch.mask.sum(), 1.0))
        r_tot = total_reward(batch.rewards, r_i)

        # GGN: TD loss on r_tot
        ggn_out = ggn_forward(batch, m.ggn)
        target_next = target_next_q_tot(batch, m.target_ggn)
        loss_g = compute_global_loss(batch, ggn_out, target_next, r_tot, s.gamma)
        nx.backward(loss_g)
        nx.clip_grad_norm(self.ggn_opt.params, s.grad_clip)
        self.ggn_opt.step()
        self.update_log.append("ggn")
        report["L_global"] = loss_g.item()

        # LPN: distill from the GGN outputs of this batch
        if m.lpn is not None:
            lpn_out = lpn_forward(batch, m.lpn)
            kd = compute_kd_losses(ggn_out, lpn_out, batch.mask, s.temperature, s.kd_weights, s.kd_terms)
            nx.backward(kd.L_local)
            for p in self.lpn_opt.params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            nx.clip_grad_norm(self.lpn_opt.params, s.grad_clip)
            self.lpn_opt.step()
            self.update_log.append("lpn")
            report.update({k: v for k, v in kd.values().items() if k != "L_local"})

        # IDM predictor
        if loss_i is not None:
            nx.backward(loss_i)
            self.idm_opt.step()
            self.update_log.append("idm")
            report["L_I"] = loss_i.item()

        self.train_steps += 1
        return report


@dataclass
class EvalResult:
    mean_return: float
    capture_rate: float
    mean_length: float


def evaluate(
    env_config: GridWorldConfig,
    model: DDNModel,
    n_episodes: int,
    seed: int,
    policy: str = "lpn",
    eps: float = 0.0,
) -> EvalResult:
    """Greedy decentralized episodes (``eps`` > 0 only for baselines)."""
    env = PredatorPrey(env_config)
    rng = np.random.default_rng(seed)
    returns, rates, lengths = [], [], []
    for k in range(n_episodes):
        mode = "eval" if eps == 0.0 else "train"
        _, st = run_episode(env, model, eps, rng, mode=mode, policy=policy, seed=seed * 100_003 + k)
        returns.append(st.episode_return)
        rates.append(st.capture_rate)
        lengths.append(st.length)
    return EvalResult(float(np.mean(returns)), float(np.mean(rates)), float(np.mean(lengths)))


def zero_model(model: DDNModel) -> DDNModel:
    twin = model.clone()
    for _, t in twin.named_tensors():
        t.data = np.zeros_like(t.data)
    return twin


def random_baseline(env_config: GridWorldConfig, model: DDNModel, n_episodes: int, seed: int) -> EvalResult:
    """Uniform-random joint policy (zeroed networks acting with ε = 1)."""
    return evaluate(env_config, zero_model(model), n_episodes, seed, policy="ggn", eps=1.0)


def build_model(
    env_config: GridWorldConfig,
    rng: np.random.Generator,
    mixer: str = "vdn",
    ddn: bool = True,
    personalized: bool = True,
    idm: bool = True,
    mu: float = 0.75,
    intrinsic_scale: float = 1.0,
    normalize_idm: bool = True,
    sizes: NetworkSizes = NetworkSizes(),
) -> DDNModel:
    return DDNModel(
        env_config.n_predators,
        env_config.obs_dim,
        env_config.state_dim,
        N_ACTIONS,
        rng,
        mixer=mixer,
        ddn=ddn,
        personalized=personalized,
        idm=idm,
        mu=mu,
        intrinsic_scale=intrinsic_scale,
        normalize_idm=normalize_idm,
        sizes=sizes,
    )
