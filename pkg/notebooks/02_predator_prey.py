# %% [markdown]
# # The Predator-Prey grid
#
# Predators must stand next to a prey and issue `capture` together. A lone
# capture costs 2, a joint one pays 10.

# %%
import numpy as np

from ddnet.env import CAPTURE, STAY, GridWorldConfig, PredatorPrey, WorldState, observe

cfg = GridWorldConfig(grid_size=5, n_predators=2, n_prey=1)
env = PredatorPrey(cfg)
env.reset(0)


def show(state):
    grid = np.full((cfg.grid_size, cfg.grid_size), ".")
    for r, c in state.prey[state.alive]:
        grid[r, c] = "o"
    for i, (r, c) in enumerate(state.predators):
        grid[r, c] = str(i)
    print("\n".join(" ".join(row) for row in grid))


env.state = WorldState(np.array([[2, 1], [0, 4]]), np.array([[2, 2]]), np.array([True]))
show(env.state)
print("solo capture reward:", env.step([CAPTURE, STAY])[2])

env.state = WorldState(np.array([[2, 1], [2, 3]]), np.array([[2, 2]]), np.array([True]))
print("joint capture reward:", env.step([CAPTURE, CAPTURE])[2])

# %% [markdown]
# Each predator sees a 5x5 window with channels (predator, prey, outside).

# %%
s = WorldState(np.array([[0, 0], [1, 1]]), np.array([[2, 2]]), np.array([True]))
window = observe(cfg, s, 0).reshape(5, 5, 3)
for k, name in enumerate(["predators", "prey", "outside"]):
    print(name)
    print(window[..., k].astype(int))

# %% [markdown]
# A random rollout on the desk-sized grid.

# %%
env = PredatorPrey(GridWorldConfig(grid_size=7, n_predators=4, n_prey=2))
env.reset(3)
rng = np.random.default_rng(3)
total, done = 0.0, False
while not done:
    _, _, r, done, info = env.step(rng.integers(6, size=4))
    total += r
print("random return", total, "after", env.state.t, "steps")
