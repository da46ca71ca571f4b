# %% [markdown]
# # Mixing networks and the personalization block
#
# VDN adds the chosen per-agent values. QMIX builds state-conditioned
# non-negative mixing weights, so raising any agent's value never lowers the
# team value.

# %%
import numpy as np

from ddnet import numerics as nx
from ddnet.networks import FusionBlock, QMixer, fusion_block_forward, qmix_mix, vdn_mix

rng = np.random.default_rng(0)
q = nx.parameter(rng.normal(size=(1, 4)))
print("VDN:", vdn_mix(q).item(), "=", q.data.sum())

mixer = QMixer(4, 6, rng, mixing_dim=8, hyper_dim=16)
state = rng.normal(size=(1, 6))
out = qmix_mix(q, state, mixer)
nx.backward(nx.sum(out))
print("QMIX:", out.item(), " dQtot/dq:", np.round(q.grad, 3))

# %% [markdown]
# The fusion block maps each agent's local features to a matrix W and bias B,
# then transforms the shared state: every agent gets its own view of it.

# %%
block = FusionBlock(local_dim=5, state_dim=6, out_dim=3, rng=rng)
local = rng.normal(size=(4, 5))
shared = np.repeat(state, 4, axis=0)
views = fusion_block_forward(block, local, shared).data
print("four agents, one state, four personalized views:")
print(np.round(views, 3))
