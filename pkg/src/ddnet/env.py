"""Grid-world Predator-Prey with a shared team reward.

Predators need a partner to capture: when two or more predators standing next
to the same prey pick ``capture`` in one step the prey is removed and the team
earns ``capture_reward``; a predator that tries alone next to a prey costs the
team ``solo_penalty``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

UP, DOWN, LEFT, RIGHT, STAY, CAPTURE = range(6)
ACTION_NAMES = ("up", "down", "left", "right", "stay", "capture")
N_ACTIONS = len(ACTION_NAMES)
MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1], [0, 0], [0, 0]])
NEIGHBOURS = MOVES[:4]

N_CHANNELS = 3  # predators, alive prey, out-of-bounds


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridWorldConfig:
    grid_size: int = 10
    n_predators: int = 8
    n_prey: int = 8
    sight_range: int = 5
    capture_reward: float = 10.0
    solo_penalty: float = 2.0
    episode_limit: int = 200
    prey_policy: str = "random_walk"

    def validate(self) -> "GridWorldConfig":
        if self.grid_size < 2:
            raise ConfigError(f"grid_size must be >= 2, got {self.grid_size}")
        if self.sight_range < 1 or self.sight_range % 2 == 0:
            raise ConfigError(f"sight_range must be a positive odd number, got {self.sight_range}")
        if self.n_predators < 2:
            raise ConfigError(f"n_predators must be >= 2 for captures to be possible, got {self.n_predators}")
        if self.n_prey < 1:
            raise ConfigError(f"n_prey must be >= 1, got {self.n_prey}")
        if self.n_predators + self.n_prey > self.grid_size**2:
            raise ConfigError(
                f"{self.n_predators} predators + {self.n_prey} prey do not fit on a "
                f"{self.grid_size}x{self.grid_size} grid"
            )
        if self.episode_limit < 1:
            raise ConfigError(f"episode_limit must be >= 1, got {self.episode_limit}")
        if self.prey_policy != "random_walk":
            raise ConfigError(f"unknown prey_policy {self.prey_policy!r}; only 'random_walk' is available")
        return self

    @property
    def obs_dim(self) -> int:
        return self.sight_range * self.sight_range * N_CHANNELS

    @property
    def state_dim(self) -> int:
        return 2 * self.n_predators + 3 * self.n_prey + 1


@dataclass
class WorldState:
    predators: np.ndarray  # (n_predators, 2) int rows/cols
    prey: np.ndarray  # (n_prey, 2)
    alive: np.ndarray  # (n_prey,) bool
    t: int = 0

    def copy(self) -> "WorldState":
        return WorldState(self.predators.copy(), self.prey.copy(), self.alive.copy(), self.t)

    def occupied(self) -> set[tuple[int, int]]:
        cells = {tuple(p) for p in self.predators.tolist()}
        cells.update(tuple(q) for q, a in zip(self.prey.tolist(), self.alive) if a)
        return cells

    def __eq__(self, other) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        return (
            self.t == other.t
            and np.array_equal(self.predators, other.predators)
            and np.array_equal(self.prey, other.prey)
            and np.array_equal(self.alive, other.alive)
        )


@dataclass
class StepInfo:
    captures: int = 0
    solo_attempts: int = 0
    terminated: bool = False
    truncated: bool = False


def _in_bounds(cell, size: int) -> bool:
    return 0 <= cell[0] < size and 0 <= cell[1] < size


def _adjacent(a, b) -> bool:
    return abs(int(a[0]) - int(b[0])) + abs(int(a[1]) - int(b[1])) == 1


def observe(config: GridWorldConfig, state: WorldState, agent_id: int) -> np.ndarray:
    """Egocentric sight_range x sight_range x 3 window, flattened channel-last."""
    if not 0 <= agent_id < config.n_predators:
        raise IndexError(f"agent_id {agent_id} out of range for {config.n_predators} predators")
    k = config.sight_range
    half = k // 2
    window = np.zeros((k, k, N_CHANNELS))
    r0, c0 = state.predators[agent_id] - half
    size = config.grid_size
    for i in range(k):
        for j in range(k):
            if not _in_bounds((r0 + i, c0 + j), size):
                window[i, j, 2] = 1.0
    for r, c in state.predators.tolist():
        i, j = r - r0, c - c0
        if 0 <= i < k and 0 <= j < k:
            window[i, j, 0] = 1.0
    for (r, c), a in zip(state.prey.tolist(), state.alive):
        if a:
            i, j = r - r0, c - c0
            if 0 <= i < k and 0 <= j < k:
                window[i, j, 1] = 1.0
    return window.reshape(-1)


def encode_state(config: GridWorldConfig, state: WorldState) -> np.ndarray:
    """Flat state vector in [0, 1]: predator (row, col), prey (row, col, alive), time."""
    scale = float(config.grid_size - 1)
    pred = state.predators / scale
    prey = np.concatenate([state.prey / scale, state.alive[:, None].astype(float)], axis=1)
    prey[~state.alive] = 0.0
    out = np.concatenate([pred.reshape(-1), prey.reshape(-1), [state.t / config.episode_limit]])
    return out.astype(np.float64)


def move_predators(config: GridWorldConfig, state: WorldState, actions: Sequence[int]) -> WorldState:
    """Apply movement in ascending agent order; blocked moves become stay."""
    nxt = state.copy()
    occupied = nxt.occupied()
    for i, a in enumerate(actions):
        if a >= 4:
            continue
        src = tuple(nxt.predators[i].tolist())
        dst = (src[0] + int(MOVES[a][0]), src[1] + int(MOVES[a][1]))
        if _in_bounds(dst, config.grid_size) and dst not in occupied:
            occupied.discard(src)
            occupied.add(dst)
            nxt.predators[i] = dst
    return nxt


def resolve_captures(config: GridWorldConfig, state: WorldState, actions: Sequence[int]) -> tuple[WorldState, float, StepInfo]:
    """Prey-by-prey in index order; a predator takes part in at most one capture."""
    nxt = state.copy()
    capturing = [i for i, a in enumerate(actions) if a == CAPTURE]
    consumed: set[int] = set()
    info = StepInfo()
    reward = 0.0
    alive_before = nxt.alive.copy()
    for j in range(config.n_prey):
        if not nxt.alive[j]:
            continue
        partners = [i for i in capturing if i not in consumed and _adjacent(nxt.predators[i], nxt.prey[j])]
        if len(partners) >= 2:
            nxt.alive[j] = False
            consumed.update(partners)
            reward += config.capture_reward
            info.captures += 1
    for i in capturing:
        if i in consumed:
            continue
        if any(alive_before[j] and _adjacent(nxt.predators[i], nxt.prey[j]) for j in range(config.n_prey)):
            reward -= config.solo_penalty
            info.solo_attempts += 1
    return nxt, reward, info


def move_prey(config: GridWorldConfig, state: WorldState, rng: np.random.Generator) -> WorldState:
    """Each alive prey, in index order, draws one of {up, down, left, right, stay}."""
    nxt = state.copy()
    occupied = nxt.occupied()
    for j in range(config.n_prey):
        if not nxt.alive[j]:
            continue
        a = int(rng.integers(5))
        src = tuple(nxt.prey[j].tolist())
        dst = (src[0] + int(MOVES[a][0]), src[1] + int(MOVES[a][1]))
        if a != STAY and _in_bounds(dst, config.grid_size) and dst not in occupied:
            occupied.discard(src)
            occupied.add(dst)
            nxt.prey[j] = dst
    return nxt


class PredatorPrey:
    """Stateful wrapper; ``reset`` seeds placement and the prey random walk."""

    def __init__(self, config: GridWorldConfig | None = None):
        self.config = (config or GridWorldConfig()).validate()
        self.state: WorldState | None = None
        self._rng = np.random.default_rng(0)

    @property
    def n_agents(self) -> int:
        return self.config.n_predators

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def state_dim(self) -> int:
        return self.config.state_dim

    def reset(self, seed: int | None = None) -> tuple[WorldState, np.ndarray]:
        cfg = self.config
        self._rng = np.random.default_rng(seed)
        cells = self._rng.choice(cfg.grid_size**2, size=cfg.n_predators + cfg.n_prey, replace=False)
        coords = np.stack(np.divmod(cells, cfg.grid_size), axis=1).astype(np.int64)
        self.state = WorldState(
            predators=coords[: cfg.n_predators].copy(),
            prey=coords[cfg.n_predators :].copy(),
            alive=np.ones(cfg.n_prey, dtype=bool),
            t=0,
        )
        return self.state.copy(), self.observations()

    def observations(self) -> np.ndarray:
        return np.stack([observe(self.config, self.state, i) for i in range(self.config.n_predators)])

    def encode_state(self) -> np.ndarray:
        return encode_state(self.config, self.state)

    def step(self, joint_action: Sequence[int]) -> tuple[WorldState, np.ndarray, float, bool, StepInfo]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        cfg = self.config
        actions = [int(a) for a in joint_action]
        if len(actions) != cfg.n_predators:
            raise ValueError(f"expected {cfg.n_predators} actions, got {len(actions)}")
        for a in actions:
            if not 0 <= a < N_ACTIONS:
                raise ValueError(f"invalid action id {a}; valid ids are 0..{N_ACTIONS - 1}")
        s = move_predators(cfg, self.state, actions)
        s, reward, info = resolve_captures(cfg, s, actions)
        s = move_prey(cfg, s, self._rng)
        s.t += 1
        info.terminated = not s.alive.any()
        info.truncated = not info.terminated and s.t >= cfg.episode_limit
        self.state = s
        return s.copy(), self.observations(), reward, info.terminated or info.truncated, info


def write_replay_log(path, records: Iterable[dict]) -> None:
    """Write one JSON object per line: ``{"t", "actions", "reward", "done"}``."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({k: rec[k] for k in ("t", "actions", "reward", "done")}) + "\n")


def read_replay_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay(config: GridWorldConfig, seed: int, records: Sequence[dict]) -> list[dict]:
    """Re-run logged joint actions from ``reset(seed)`` and return fresh records."""
    env = PredatorPrey(config)
    env.reset(seed)
    out = []
    for rec in records:
        _, _, reward, done, _ = env.step(rec["actions"])
        out.append({"t": env.state.t - 1, "actions": list(rec["actions"]), "reward": reward, "done": done})
        if done:
            break
    return out
