# %% [markdown]
# # Reverse-mode autodiff on numpy
#
# `ddnet.numerics` carries a float64 array, an optional gradient and a closure
# that pushes the gradient back to its inputs. Below we fit a small MLP and
# compare one gradient against central differences.

# %%
import numpy as np

from ddnet import numerics as nx
from ddnet.networks import MLP

rng = np.random.default_rng(0)
x = rng.normal(size=(64, 3))
y = np.sin(x.sum(axis=1, keepdims=True))

net = MLP(3, [32], 1, rng, activation="tanh")
opt = nx.Adam(net.parameters(), lr=1e-2)
for step in range(301):
    loss = nx.mse(net(x), y)
    nx.backward(loss)
    opt.step()
    if step % 100 == 0:
        print(f"step {step:3d}  mse {loss.item():.4f}")

# %% [markdown]
# Gradient check on the first weight entry.

# %%
w = net.parameters()[0]
nx.backward(nx.mse(net(x), y))
analytic = w.grad[0, 0]
h = 1e-5
w.data[0, 0] += h
with nx.no_grad():
    up = nx.mse(net(x), y).item()
w.data[0, 0] -= 2 * h
with nx.no_grad():
    down = nx.mse(net(x), y).item()
w.data[0, 0] += h
print("analytic", analytic, "numeric", (up - down) / (2 * h))
