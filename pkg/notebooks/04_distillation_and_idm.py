# %% [markdown]
# # Teacher, student and the novelty bonus
#
# The GGN (teacher) sees the global state; the LPN (student) sees only local
# observations and is fitted to the teacher's block outputs, hidden features
# and Q-values. The IDM pays a bonus for states its predictor has not learned.

# %%
import numpy as np

from ddnet import numerics as nx
from ddnet.ddn import IDM, NetworkSizes, compute_kd_losses, ggn_forward, idm_intrinsic_reward, lpn_forward
from ddnet.env import GridWorldConfig, PredatorPrey
from ddnet.replay import EpisodeBatch
from ddnet.training import build_model, run_episode

env_cfg = GridWorldConfig(grid_size=5, n_predators=3, n_prey=1, episode_limit=20)
sizes = NetworkSizes(agent_hidden=16, fusion_dim=8, generator_hidden=16)
rng = np.random.default_rng(0)
model = build_model(env_cfg, rng, sizes=sizes)
env = PredatorPrey(env_cfg)
episodes = [run_episode(env, model, 1.0, rng)[0] for _ in range(8)]
batch = EpisodeBatch.from_episodes(episodes, 6)

# %% [markdown]
# Distill for a few hundred Adam steps and watch the three losses fall.

# %%
with nx.no_grad():
    teacher = ggn_forward(batch, model.ggn)
opt = nx.Adam(model.lpn.parameters(), lr=3e-3)
for step in range(201):
    kd = compute_kd_losses(teacher, lpn_forward(batch, model.lpn), batch.mask)
    nx.backward(kd.L_local)
    opt.step()
    if step % 50 == 0:
        print(step, {k: round(float(v), 5) for k, v in kd.values().items()})

# %% [markdown]
# The predictor learns the 16 states it trains on, so held-out states earn a
# larger bonus.

# %%
idm = IDM(env_cfg.state_dim, rng, mu=1.0, hidden=32, out_dim=16)
seen, unseen = rng.random((16, env_cfg.state_dim)), rng.random((16, env_cfg.state_dim))
idm.stats.update(seen)
opt = nx.Adam(idm.predictor.parameters(), lr=5e-4)
for _ in range(500):
    nx.backward(idm_intrinsic_reward(seen, idm, rng)[1])
    opt.step()
print("bonus on trained states", idm_intrinsic_reward(seen, idm, rng)[0].mean())
print("bonus on new states    ", idm_intrinsic_reward(unseen, idm, rng)[0].mean())
