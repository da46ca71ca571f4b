import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddnet.env import (
    CAPTURE,
    LEFT,
    N_ACTIONS,
    RIGHT,
    STAY,
    UP,
    ConfigError,
    GridWorldConfig,
    PredatorPrey,
    WorldState,
    encode_state,
    observe,
    read_replay_log,
    replay,
    write_replay_log,
)
from oracles import pp_transition


def make_env(size=5, n_pred=2, n_prey=1, **kw):
    return PredatorPrey(GridWorldConfig(grid_size=size, n_predators=n_pred, n_prey=n_prey, **kw))


def place(env, predators, prey, alive=None, t=0, seed=0):
    env.reset(seed)
    env.state = WorldState(
        np.array(predators, dtype=np.int64),
        np.array(prey, dtype=np.int64),
        np.ones(len(prey), dtype=bool) if alive is None else np.array(alive),
        t,
    )


def random_state(rng, size, n_pred, n_prey):
    cells = rng.choice(size * size, size=n_pred + n_prey, replace=False)
    coords = np.stack(np.divmod(cells, size), axis=1)
    alive = rng.random(n_prey) < 0.8
    return coords[:n_pred], coords[n_pred:], alive


def oracle_step(env, actions, seed):
    s = env.state
    draws = np.random.default_rng(seed)
    return pp_transition(
        env.config.grid_size,
        s.predators.tolist(),
        s.prey.tolist(),
        s.alive.tolist(),
        actions,
        env.config.capture_reward,
        env.config.solo_penalty,
        prey_draws=(int(draws.integers(5)) for _ in itertools.count()),
    )


def test_reset_is_deterministic():
    env = make_env(10, 8, 8)
    a, obs_a = env.reset(42)
    b, obs_b = env.reset(42)
    assert a == b and np.array_equal(obs_a, obs_b)
    assert a.t == 0 and a.alive.all()


def test_reset_places_entities_without_overlap():
    env = make_env(7, 4, 2)
    for seed in range(1000):
        s, _ = env.reset(seed)
        cells = {tuple(c) for c in np.concatenate([s.predators, s.prey]).tolist()}
        assert len(cells) == 6
        assert all(0 <= r < 7 and 0 <= c < 7 for r, c in cells)


def test_config_validation():
    with pytest.raises(ConfigError, match="fit"):
        GridWorldConfig(grid_size=2, n_predators=3, n_prey=2).validate()
    with pytest.raises(ConfigError, match="odd"):
        GridWorldConfig(sight_range=4).validate()
    with pytest.raises(ConfigError):
        GridWorldConfig(n_predators=1).validate()


def test_joint_capture_rewards_ten():
    env = make_env()
    place(env, [[2, 1], [2, 3]], [[2, 2]])
    _, _, r, done, info = env.step([CAPTURE, CAPTURE])
    assert r == 10.0 and info.captures == 1 and done and info.terminated


def test_solo_capture_costs_two():
    env = make_env()
    place(env, [[2, 1], [0, 4]], [[2, 2]])
    _, _, r, done, info = env.step([CAPTURE, STAY])
    assert r == -2.0 and info.solo_attempts == 1 and not done


def test_capture_without_adjacent_prey_is_a_no_op():
    env = make_env()
    place(env, [[0, 0], [4, 4]], [[2, 2]])
    assert env.step([CAPTURE, CAPTURE])[2] == 0.0


def test_predator_consumed_by_first_capture():
    # predator 1 sits between two prey; each prey has one more partner
    env = make_env(5, 3, 2)
    place(env, [[1, 0], [1, 2], [1, 4]], [[1, 1], [1, 3]])
    _, _, r, _, info = env.step([CAPTURE, CAPTURE, CAPTURE])
    assert info.captures == 1
    assert r == 10.0 - 2.0  # predator 2 is left without a partner next to prey 1
    assert env.state.alive.tolist() == [False, True]


def test_blocked_moves_become_stay_in_index_order():
    env = make_env(3, 2, 1)
    place(env, [[0, 0], [0, 1]], [[2, 2]])
    s, _, _, _, _ = env.step([RIGHT, LEFT])  # 0 blocked by 1, then 1 blocked by 0
    assert s.predators.tolist() == [[0, 0], [0, 1]]
    s, _, _, _, _ = env.step([UP, UP])  # walls
    assert s.predators.tolist() == [[0, 0], [0, 1]]


def test_invalid_action_rejected():
    env = make_env()
    env.reset(0)
    with pytest.raises(ValueError, match="invalid action"):
        env.step([0, 6])


def test_exhaustive_oracle_3x3():
    env = make_env(3, 2, 1)
    rng = np.random.default_rng(2024)
    seen_rewards = set()
    for k in range(50):
        preds, prey, alive = random_state(rng, 3, 2, 1)
        alive[:] = True
        for actions in itertools.product(range(N_ACTIONS), repeat=2):
            place(env, preds, prey)
            expected = oracle_step(env, list(actions), seed=k)
            env._rng = np.random.default_rng(k)
            s, _, r, _, _ = env.step(actions)
            assert r == expected[3]
            assert s.predators.tolist() == [list(p) for p in expected[0]]
            assert s.alive.tolist() == expected[2]
            live_prey = [list(p) for p, a in zip(expected[1], expected[2]) if a]
            assert s.prey[s.alive].tolist() == live_prey
            seen_rewards.add(r)
    assert seen_rewards == {10.0, -2.0, 0.0}


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.integers(0, N_ACTIONS - 1), min_size=40, max_size=40))
def test_random_rollouts_match_oracle(seed, action_stream):
    env = make_env(5, 3, 2, episode_limit=20)
    env.reset(seed)
    for t in range(13):
        actions = action_stream[3 * t : 3 * t + 3]
        expected = oracle_step(env, actions, seed + t)
        env._rng = np.random.default_rng(seed + t)
        s, _, r, done, info = env.step(actions)
        assert r == expected[3]
        assert s.predators.tolist() == [list(p) for p in expected[0]]
        assert s.alive.tolist() == expected[2]
        # conservation and reward algebra
        assert len(s.predators) == 3
        assert r == 10 * info.captures - 2 * info.solo_attempts
        if done:
            break


def test_episode_ends_at_limit():
    env = make_env(7, 2, 1, episode_limit=5)
    env.reset(3)
    steps, done = 0, False
    while not done:
        _, _, _, done, info = env.step([STAY, STAY])
        steps += 1
    assert steps == 5 and info.truncated and not info.terminated


def test_dead_prey_never_reappear():
    env = make_env(5, 3, 2, episode_limit=300)
    env.reset(9)
    rng = np.random.default_rng(0)
    dead = np.zeros(2, dtype=bool)
    done = False
    while not done:
        s, _, _, done, _ = env.step(rng.integers(N_ACTIONS, size=3))
        assert not np.any(dead & s.alive)
        dead |= ~s.alive


def test_observation_center_and_corner():
    cfg = GridWorldConfig(grid_size=10, n_predators=2, n_prey=1)
    s = WorldState(np.array([[5, 5], [0, 0]]), np.array([[9, 9]]), np.array([True]))
    center = observe(cfg, s, 0).reshape(5, 5, 3)
    assert center[..., 1].sum() == 0 and center[..., 2].sum() == 0
    assert center[2, 2, 0] == 1.0
    corner = observe(cfg, s, 1).reshape(5, 5, 3)
    assert corner[..., 2].sum() == 16
    assert np.all(corner[corner[..., 2] == 1][:, :2] == 0)


def test_observation_ignores_entities_outside_window():
    cfg = GridWorldConfig(grid_size=10, n_predators=2, n_prey=2)
    a = WorldState(np.array([[1, 1], [8, 8]]), np.array([[2, 2], [9, 0]]), np.array([True, True]))
    b = WorldState(np.array([[1, 1], [7, 9]]), np.array([[2, 2], [6, 0]]), np.array([True, True]))
    np.testing.assert_array_equal(observe(cfg, a, 0), observe(cfg, b, 0))


def test_encode_state_shape_range_and_injectivity():
    cfg = GridWorldConfig(grid_size=7, n_predators=4, n_prey=2)
    assert cfg.state_dim == 2 * 4 + 3 * 2 + 1
    rng = np.random.default_rng(5)
    keys, codes = set(), set()
    for _ in range(10_000):
        preds, prey, alive = random_state(rng, 7, 4, 2)
        prey = np.where(alive[:, None], prey, 0)
        t = int(rng.integers(cfg.episode_limit + 1))
        key = (preds.tobytes(), prey.tobytes(), alive.tobytes(), t)
        if key in keys:
            continue
        keys.add(key)
        code = encode_state(cfg, WorldState(preds, prey, alive, t))
        assert code.shape == (cfg.state_dim,)
        assert np.all((code >= 0) & (code <= 1))
        codes.add(code.tobytes())
    assert len(codes) == len(keys)


def test_replay_log_round_trip(tmp_path):
    cfg = GridWorldConfig(grid_size=6, n_predators=3, n_prey=2, episode_limit=30)
    env = PredatorPrey(cfg)
    env.reset(17)
    rng = np.random.default_rng(1)
    records, done = [], False
    while not done:
        a = rng.integers(N_ACTIONS, size=3).tolist()
        _, _, r, done, _ = env.step(a)
        records.append({"t": env.state.t - 1, "actions": a, "reward": r, "done": done})
    write_replay_log(tmp_path / "log.jsonl", records)
    assert replay(cfg, 17, read_replay_log(tmp_path / "log.jsonl")) == records
