"""Whole-episode storage and padded batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Episode:
    """One complete rollout of length T.

    ``states``/``obs`` hold T+1 entries (the final one is the successor of the
    last transition); ``actions``/``rewards``/``terminated`` hold T.
    """

    states: np.ndarray  # (T+1, state_dim)
    obs: np.ndarray  # (T+1, n, obs_dim)
    actions: np.ndarray  # (T, n) int
    rewards: np.ndarray  # (T,)
    terminated: np.ndarray  # (T,) bool; true only when the episode ended by capture of all prey

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class EpisodeBatch:
    """B episodes padded to length L; slots with ``mask == 0`` carry no data."""

    states: np.ndarray | None  # (B, L+1, state_dim)
    obs: np.ndarray  # (B, L+1, n, obs_dim)
    actions: np.ndarray  # (B, L, n) int
    rewards: np.ndarray  # (B, L)
    terminated: np.ndarray  # (B, L) float 0/1
    mask: np.ndarray  # (B, L) float 0/1
    n_actions: int

    @property
    def batch_size(self) -> int:
        return self.actions.shape[0]

    @property
    def max_len(self) -> int:
        return self.actions.shape[1]

    @property
    def n_agents(self) -> int:
        return self.actions.shape[2]

    def local_features(self) -> np.ndarray:
        """(B, L+1, n, obs_dim + n_actions + n): observation, previous action
        one-hot (zeros at t=0) and agent-id one-hot."""
        B, L, n = self.actions.shape
        prev = np.zeros((B, L + 1, n, self.n_actions))
        idx = np.clip(self.actions, 0, self.n_actions - 1)
        np.put_along_axis(prev[:, 1:], idx[..., None], 1.0, axis=-1)
        ids = np.broadcast_to(np.eye(n), (B, L + 1, n, n))
        return np.concatenate([self.obs, prev, ids], axis=-1)

    @classmethod
    def from_episodes(cls, episodes: list[Episode], n_actions: int) -> "EpisodeBatch":
        B = len(episodes)
        L = max(len(e) for e in episodes)
        n, od = episodes[0].obs.shape[1:]
        sd = episodes[0].states.shape[1]
        states = np.zeros((B, L + 1, sd))
        obs = np.zeros((B, L + 1, n, od))
        actions = np.zeros((B, L, n), dtype=np.int64)
        rewards = np.zeros((B, L))
        terminated = np.zeros((B, L))
        mask = np.zeros((B, L))
        for b, e in enumerate(episodes):
            T = len(e)
            states[b, : T + 1] = e.states
            obs[b, : T + 1] = e.obs
            actions[b, :T] = e.actions
            rewards[b, :T] = e.rewards
            terminated[b, :T] = e.terminated
            mask[b, :T] = 1.0
        return cls(states, obs, actions, rewards, terminated, mask, n_actions)


class ReplayBuffer:
    """Ring buffer of complete episodes."""

    def __init__(self, capacity: int = 5000):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._episodes: list[Episode] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._episodes)

    def add(self, episode: Episode) -> None:
        if len(self._episodes) < self.capacity:
            self._episodes.append(episode)
        else:
            self._episodes[self._next] = episode
        self._next = (self._next + 1) % self.capacity

    def can_sample(self, batch_size: int) -> bool:
        return len(self) > batch_size

    def sample(self, batch_size: int, rng: np.random.Generator, n_actions: int) -> EpisodeBatch:
        if batch_size > len(self):
            raise ValueError(f"cannot sample {batch_size} episodes from a buffer of {len(self)}")
        idx = rng.choice(len(self), size=batch_size, replace=False)
        return EpisodeBatch.from_episodes([self._episodes[i] for i in sorted(idx)], n_actions)
