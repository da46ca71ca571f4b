"""Small random fixtures shared by several test modules."""

import numpy as np

from ddnet.replay import Episode, EpisodeBatch


def random_episode(rng, T, n, obs_dim, state_dim, n_actions=6, terminal=False):
    return Episode(
        states=rng.random((T + 1, state_dim)),
        obs=(rng.random((T + 1, n, obs_dim)) < 0.3).astype(float),
        actions=rng.integers(n_actions, size=(T, n)),
        rewards=rng.choice([0.0, 10.0, -2.0], size=T),
        terminated=np.arange(T) == T - 1 if terminal else np.zeros(T, dtype=bool),
    )


def random_batch(rng, lengths=(4, 2, 3), n=3, obs_dim=5, state_dim=7, n_actions=6):
    eps = [random_episode(rng, T, n, obs_dim, state_dim, n_actions, terminal=k % 2 == 0) for k, T in enumerate(lengths)]
    return EpisodeBatch.from_episodes(eps, n_actions)
