"""Training runs, metrics files, ablation sweeps and plot-data emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .config import RunConfig, from_text
from .ddn import NetworkSizes
from .env import ConfigError, PredatorPrey
from .replay import ReplayBuffer
from .training import (
    Learner,
    ScheduleState,
    TrainSettings,
    build_model,
    evaluate,
    run_episode,
    sync_target,
)

log = logging.getLogger(__name__)

METRICS_SCHEMA = "ddnet-metrics/1"
METRICS_COLUMNS = (
    "step",
    "episode_return",
    "capture_rate",
    "epsilon",
    "L_global",
    "L_B",
    "L_Q",
    "L_F",
    "L_I",
    "mean_r_I",
    "eval_return",
)
OUTPUT_ROOT_ENV = "DDNET_OUTPUT_ROOT"


class SchemaError(ValueError):
    pass


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if np.isnan(value):
        return ""
    return f"{value:.6f}"


def sizes_from(cfg: RunConfig) -> NetworkSizes:
    a = cfg.algo
    return NetworkSizes(a.agent_hidden, a.fusion_dim, a.generator_hidden, a.mixing_dim, a.hyper_dim, a.idm_hidden, a.idm_out)


def model_from_config(cfg: RunConfig, rng: np.random.Generator):
    a = cfg.algo
    return build_model(
        cfg.env,
        rng,
        mixer=a.mixer,
        ddn=a.ddn_enabled,
        personalized=a.use_personalized_state,
        idm=a.idm_enabled,
        mu=a.mu,
        intrinsic_scale=a.intrinsic_scale,
        normalize_idm=a.normalize_idm_state,
        sizes=sizes_from(cfg),
    )


def settings_from(cfg: RunConfig) -> TrainSettings:
    a, o = cfg.algo, cfg.optim
    return TrainSettings(
        lr=o.lr,
        gamma=o.gamma,
        rms_decay=o.rms_decay,
        rms_eps=o.rms_eps,
        grad_clip=o.grad_clip,
        batch_size=o.batch_size,
        buffer_capacity=o.buffer_capacity,
        target_interval=o.target_interval,
        temperature=a.temperature,
        kd_terms=tuple(a.kd_terms),
        kd_weights={"L_B": a.weight_L_B, "L_Q": a.weight_L_Q, "L_F": a.weight_L_F},
    )


# ---------------------------------------------------------------------------
# metrics files


def metrics_header(cfg: RunConfig) -> str:
    lines = [f"# schema: {METRICS_SCHEMA}"]
    lines += ["# config: " + line for line in cfg.dump().splitlines()]
    return "\n".join(lines) + "\n" + ",".join(METRICS_COLUMNS) + "\n"


def read_metrics(path) -> tuple[RunConfig, list[dict[str, float | None]]]:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# schema: {METRICS_SCHEMA}":
        found = lines[0] if lines else "<empty>"
        raise SchemaError(f"{path}: expected '# schema: {METRICS_SCHEMA}', found {found!r}")
    cfg_lines = [ln[len("# config: ") :] for ln in lines if ln.startswith("# config: ")]
    cfg = from_text("\n".join(cfg_lines))
    body = [ln for ln in lines if not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(body)))
    if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
        raise SchemaError(f"{path}: column mismatch {reader.fieldnames}")
    rows = [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in reader]
    return cfg, rows


# ---------------------------------------------------------------------------
# training


@dataclass
class RunSummary:
    metrics_path: Path
    checkpoint_path: Path
    env_steps: int
    episodes: int
    train_steps: int
    target_syncs: int
    final_eval_return: float
    final_eval_capture_rate: float
    final_ggn_return: float | None


def resolve_out_dir(cfg: RunConfig, out_dir=None) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / cfg.out_dir if root else Path(cfg.out_dir)


def save_model(path, model, cfg: RunConfig) -> None:
    nx.save_checkpoint(path, model.state_dict(), meta={"config": cfg.to_flat()})


def load_model(path):
    params, meta = nx.load_checkpoint(path)
    cfg = RunConfig().replace(**meta["config"])
    model = model_from_config(cfg, np.random.default_rng(0))
    model.load_state_dict(params)
    return model, cfg


def train(cfg: RunConfig, out_dir=None) -> RunSummary:
    """Run the full collect/update loop for ``optim.total_steps`` environment steps."""
    out = resolve_out_dir(cfg, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng, act_rng, learn_rng = (np.random.default_rng(s) for s in seeds)
    eval_seed = cfg.seed + 1_000_003

    model = model_from_config(cfg, init_rng)
    learner = Learner(model, settings_from(cfg), learn_rng)
    buffer = ReplayBuffer(cfg.optim.buffer_capacity)
    env = PredatorPrey(cfg.env)
    schedule = ScheduleState(cfg.optim.eps_start, cfg.optim.eps_end, cfg.optim.eps_anneal_steps)
    o = cfg.optim

    metrics_path = out / "metrics.csv"
    ckpt_path = out / "checkpoint.npz"
    env_steps = episodes = syncs = 0
    next_eval = o.eval_interval if o.eval_interval > 0 else None
    next_ckpt = o.checkpoint_interval if o.checkpoint_interval > 0 else None
    final = None
    with open(metrics_path, "w", newline="") as fh:
        fh.write(metrics_header(cfg))
        while env_steps < o.total_steps:
            eps = schedule(env_steps)
            episode, stats = run_episode(env, model, eps, act_rng, mode="train")
            buffer.add(episode)
            prev_steps, env_steps = env_steps, env_steps + stats.length
            episodes += 1
            report = learner.train_step(buffer)
            if sync_target(model, env_steps, o.target_interval, prev_step=prev_steps):
                syncs += 1
            eval_return = None
            last = env_steps >= o.total_steps
            if last or (next_eval is not None and env_steps >= next_eval):
                final = evaluate(cfg.env, model, o.eval_episodes, eval_seed, policy="lpn")
                eval_return = final.mean_return
                while next_eval is not None and next_eval <= env_steps:
                    next_eval += o.eval_interval
                log.info("step %d eval return %.3f capture %.3f", env_steps, final.mean_return, final.capture_rate)
            if next_ckpt is not None and env_steps >= next_ckpt:
                save_model(out / f"checkpoint_{env_steps}.npz", model, cfg)
                while next_ckpt <= env_steps:
                    next_ckpt += o.checkpoint_interval
            report = report or {}
            row = [
                env_steps,
                stats.episode_return,
                stats.capture_rate,
                eps,
                *(report.get(k) for k in ("L_global", "L_B", "L_Q", "L_F", "L_I", "mean_r_I")),
                eval_return,
            ]
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    save_model(ckpt_path, model, cfg)
    ggn_final = None
    if cfg.algo.ddn_enabled:
        ggn_final = evaluate(cfg.env, model, o.eval_episodes, eval_seed, policy="ggn").mean_return
    summary = RunSummary(
        metrics_path,
        ckpt_path,
        env_steps,
        episodes,
        learner.train_steps,
        syncs,
        final.mean_return,
        final.capture_rate,
        ggn_final,
    )
    (out / "summary.json").write_text(
        json.dumps({k: (str(v) if isinstance(v, Path) else v) for k, v in summary.__dict__.items()}, indent=2) + "\n"
    )
    return summary


# ---------------------------------------------------------------------------
# ablations

MU_SWEEP = (None, 0.10, 0.25, 0.50, 0.75, 0.90)
KD_SWEEP = (("L_Q",), ("L_B", "L_Q", "L_F"))
STATE_SWEEP = ("personalized", "raw")
ABLATION_COLUMNS = ("sweep", "setting", "L_B", "L_Q", "L_F", "state", "idm", "mu", "seeds", "final_eval_return", "final_capture_rate")


def sweep_cells(base: RunConfig, sweep: str) -> list[tuple[str, dict]]:
    """(label, overrides) for every cell of one ablation axis."""
    if sweep == "mu":
        return [
            ("off", {"algo.idm_enabled": False}) if mu is None else (f"{mu:.2f}", {"algo.idm_enabled": True, "algo.mu": mu})
            for mu in MU_SWEEP
        ]
    if sweep == "kd":
        return [("+".join(terms), {"algo.kd_terms": list(terms)}) for terms in KD_SWEEP]
    if sweep == "state":
        return [(mode, {"algo.use_personalized_state": mode == "personalized"}) for mode in STATE_SWEEP]
    raise ConfigError(f"unknown sweep {sweep!r}; choose mu, kd or state")


SWEEP_FIELDS = {
    "mu": {"algo.idm_enabled", "algo.mu"},
    "kd": {"algo.kd_terms"},
    "state": {"algo.use_personalized_state"},
}


def ablate(base: RunConfig, sweeps: Sequence[str], seeds: Sequence[int], out_dir=None) -> Path:
    """Train one run per (cell, seed) and write ``ablation.csv``."""
    if not sweeps:
        raise ConfigError("empty sweep: name at least one of mu, kd, state")
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    if not base.algo.ddn_enabled:
        raise ConfigError("ablations apply to DDN runs; set algo.ddn_enabled: true")
    out = resolve_out_dir(base, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for sweep in sweeps:
        for label, overrides in sweep_cells(base, sweep):
            returns, rates = [], []
            for seed in seeds:
                cfg = base.replace(**overrides, seed=seed)
                summary = train(cfg, out / sweep / label / f"seed{seed}")
                returns.append(summary.final_eval_return)
                rates.append(summary.final_eval_capture_rate)
            a = base.replace(**overrides).algo
            rows.append(
                {
                    "sweep": sweep,
                    "setting": label,
                    "L_B": int("L_B" in a.kd_terms),
                    "L_Q": int("L_Q" in a.kd_terms),
                    "L_F": int("L_F" in a.kd_terms),
                    "state": "personalized" if a.use_personalized_state else "raw",
                    "idm": int(a.idm_enabled),
                    "mu": f"{a.mu:.2f}" if a.idm_enabled else "off",
                    "seeds": " ".join(str(s) for s in seeds),
                    "final_eval_return": _fmt(np.mean(returns)),
                    "final_capture_rate": _fmt(np.mean(rates)),
                }
            )
    path = out / "ablation.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return path


# ---------------------------------------------------------------------------
# plot data

PLOT_SERIES = ("episode_return", "capture_rate", "eval_return", "L_global", "L_B", "L_Q", "L_F", "L_I", "mean_r_I")


def smooth(values: np.ndarray, window: int = 10) -> np.ndarray:
    """Trailing moving average over up to ``window`` points."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    for i in range(len(values)):
        lo = max(0, i + 1 - window)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def aggregate(series: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Median and min/max across runs on the first run's x grid."""
    x0 = series[0][0]
    stacked = np.stack([y if np.array_equal(x, x0) else np.interp(x0, x, y) for x, y in series])
    return x0, np.median(stacked, axis=0), stacked.min(axis=0), stacked.max(axis=0)


def plot_data(paths: Sequence, out_dir, window: int = 10) -> list[Path]:
    """Write one ``<series>.tsv`` per metric with columns step, median, min, max."""
    if not paths:
        raise ConfigError("plot needs at least one metrics file")
    runs = [read_metrics(p)[1] for p in paths]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in PLOT_SERIES:
        series = []
        for rows in runs:
            pts = [(r["step"], r[name]) for r in rows if r[name] is not None]
            if pts:
                x, y = np.array(pts).T
                series.append((x, smooth(y, window)))
        if len(series) != len(runs):
            continue
        x, med, lo, hi = aggregate(series)
        path = out / f"{name}.tsv"
        with open(path, "w") as fh:
            fh.write(f"# {METRICS_SCHEMA} plot series: {name}; trailing window {window}; {len(runs)} run(s)\n")
            fh.write("step\tmedian\tmin\tmax\n")
            for row in zip(x, med, lo, hi):
                fh.write("\t".join(_fmt(v) for v in row) + "\n")
        written.append(path)
    return written
