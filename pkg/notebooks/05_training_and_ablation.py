# %% [markdown]
# # Training runs, ablations and curve data
#
# A short run on a small grid, a mu sweep over two seeds, and the
# median/min/max curve files the plot command writes. Everything lands in a
# temporary directory.

# %%
import csv
import tempfile
from pathlib import Path

from ddnet.config import parse_config
from ddnet.experiment import ablate, plot_data, read_metrics, train

out = Path(tempfile.mkdtemp())
small = {
    "env.grid_size": 5,
    "env.n_predators": 3,
    "env.n_prey": 1,
    "env.episode_limit": 30,
    "optim.total_steps": 1500,
    "optim.eval_interval": 500,
    "optim.eval_episodes": 4,
    "optim.eps_anneal_steps": 1000,
}
cfg = parse_config(None, small)
summary = train(cfg, out / "run")
print(summary)
_, rows = read_metrics(summary.metrics_path)
print([(r["step"], r["eval_return"]) for r in rows if r["eval_return"] is not None])

# %%
table = ablate(cfg.replace(**{"optim.total_steps": 300}), ["mu"], [0, 1], out / "ablate")
for row in csv.DictReader(table.open()):
    print(row["setting"], row["final_eval_return"])

# %%
runs = [train(cfg.replace(seed=s), out / f"seed{s}").metrics_path for s in (1, 2)]
for path in plot_data(runs, out / "plots"):
    print(path.name, len(path.read_text().splitlines()) - 2, "points")
