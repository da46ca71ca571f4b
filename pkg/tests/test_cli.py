import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from ddnet import cli
from ddnet.config import RunConfig, from_text, parse_config
from ddnet.env import ConfigError
from ddnet.experiment import (
    ABLATION_COLUMNS,
    METRICS_COLUMNS,
    SWEEP_FIELDS,
    SchemaError,
    ablate,
    aggregate,
    load_model,
    plot_data,
    read_metrics,
    smooth,
    sweep_cells,
    train,
)

TINY = {
    "env.grid_size": 5,
    "env.n_predators": 3,
    "env.n_prey": 1,
    "env.episode_limit": 15,
    "algo.agent_hidden": 8,
    "algo.fusion_dim": 4,
    "algo.generator_hidden": 8,
    "algo.mixing_dim": 4,
    "algo.hyper_dim": 8,
    "algo.idm_hidden": 8,
    "algo.idm_out": 8,
    "optim.batch_size": 2,
    "optim.buffer_capacity": 8,
    "optim.total_steps": 150,
    "optim.eval_interval": 60,
    "optim.eval_episodes": 2,
    "optim.eps_anneal_steps": 100,
    "optim.target_interval": 40,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


# --- configuration ----------------------------------------------------------------


def test_empty_config_gives_documented_defaults(tmp_path):
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    cfg = parse_config(empty)
    assert cfg.optim.lr == 5e-4 and cfg.optim.gamma == 0.99
    assert (cfg.optim.eps_start, cfg.optim.eps_end, cfg.optim.eps_anneal_steps) == (1.0, 0.05, 50_000)
    assert cfg.optim.rms_decay == 0.99
    assert (cfg.env.grid_size, cfg.env.n_predators, cfg.env.n_prey, cfg.env.episode_limit) == (10, 8, 8, 200)
    assert cfg == RunConfig()


def test_flag_beats_file_beats_default(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("algo.mu: 0.5\noptim.lr: 0.001\n")
    args = cli.build_parser().parse_args(["train", "--config", str(path), "--mu", "0.75"])
    cfg = cli._config_from_args(args)
    assert cfg.algo.mu == 0.75 and cfg.optim.lr == 0.001 and cfg.optim.gamma == 0.99


def test_nested_sections_are_accepted(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("env:\n  grid_size: 7\noptim.lr: 0.01\n")
    cfg = parse_config(path)
    assert cfg.env.grid_size == 7 and cfg.optim.lr == 0.01


def test_validation_messages():
    with pytest.raises(ConfigError, match=r"algo.mu must lie in \[0, 1\]"):
        parse_config(None, {"algo.mu": 1.5})
    with pytest.raises(ConfigError, match="unknown config key 'algo.muu'"):
        parse_config(None, {"algo.muu": 0.5})
    with pytest.raises(ConfigError, match="optim.lr"):
        parse_config(None, {"optim.lr": 0})
    with pytest.raises(ConfigError, match="fit"):
        parse_config(None, {"env.grid_size": 3, "env.n_predators": 8})
    with pytest.raises(ConfigError, match="cannot interpret"):
        parse_config(None, {"optim.batch_size": "many"})


def test_config_round_trips_through_text():
    cfg = parse_config(None, {"algo.kd_terms": "L_Q", "algo.mixer": "qmix", "seed": 4, "optim.lr": 1e-3})
    again = from_text(cfg.dump())
    assert again == cfg
    assert again.algo.kd_terms == ("L_Q",)


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["train", "--mu", "1.5"]) == 1
    assert "algo.mu" in capsys.readouterr().err
    assert cli.main(["train", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.npz")]) == 2
    assert "missing.npz" in capsys.readouterr().err
    assert cli.main(["ablate", "--sweep", "mu", "--seeds", "a,b"]) == 1


# --- training runs ----------------------------------------------------------------


def test_metrics_are_byte_identical_across_runs(tiny_config, tmp_path):
    cfg = parse_config(tiny_config)
    a = train(cfg, tmp_path / "a")
    b = train(cfg, tmp_path / "b")
    assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()
    assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()
    c = train(cfg.replace(seed=1), tmp_path / "c")
    assert c.metrics_path.read_bytes() != a.metrics_path.read_bytes()


def test_metrics_file_layout_and_embedded_config(tiny_config, tmp_path):
    cfg = parse_config(tiny_config, {"seed": 3})
    summary = train(cfg, tmp_path / "run")
    lines = summary.metrics_path.read_text().splitlines()
    assert lines[0] == "# schema: ddnet-metrics/1"
    header = next(ln for ln in lines if not ln.startswith("#"))
    assert tuple(header.split(",")) == METRICS_COLUMNS
    parsed, rows = read_metrics(summary.metrics_path)
    assert parsed == cfg
    assert rows[-1]["step"] == summary.env_steps >= cfg.optim.total_steps
    assert rows[-1]["eval_return"] == pytest.approx(summary.final_eval_return, abs=1e-6)
    assert [r["step"] for r in rows] == sorted(r["step"] for r in rows)
    assert summary.target_syncs == summary.env_steps // cfg.optim.target_interval
    body = [ln for ln in lines if not ln.startswith("#")][1:]
    assert all(len(ln.split(",")) == len(METRICS_COLUMNS) for ln in body)
    assert any(r["L_B"] is not None for r in rows)


def test_baseline_run_has_no_ddn_parts(tiny_config, tmp_path):
    cfg = parse_config(tiny_config, {"algo.ddn_enabled": False})
    summary = train(cfg, tmp_path / "vdn")
    _, rows = read_metrics(summary.metrics_path)
    assert all(r[k] is None for r in rows for k in ("L_B", "L_Q", "L_F", "L_I", "mean_r_I"))
    assert any(r["L_global"] is not None for r in rows)
    model, _ = load_model(summary.checkpoint_path)
    assert model.lpn is None and model.idm is None and model.ggn.fusion is None
    assert summary.final_ggn_return is None


def test_checkpoint_reloads_to_the_same_policy(tiny_config, tmp_path):
    cfg = parse_config(tiny_config)
    summary = train(cfg, tmp_path / "run")
    model, loaded = load_model(summary.checkpoint_path)
    assert loaded == cfg
    from ddnet.training import evaluate

    again = evaluate(cfg.env, model, cfg.optim.eval_episodes, cfg.seed + 1_000_003)
    assert again.mean_return == summary.final_eval_return


def test_cli_train_eval_and_output_root(tiny_config, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DDNET_OUTPUT_ROOT", str(tmp_path / "root"))
    assert cli.main(["train", "--config", str(tiny_config), "--seed", "2", "out_dir=myrun"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert Path(out["metrics_path"]) == tmp_path / "root" / "myrun" / "metrics.csv"
    assert cli.main(["eval", "--checkpoint", out["checkpoint_path"], "--episodes", "3", "--seed", "1", "--random-baseline"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["episodes"] == 3 and 0.0 <= report["capture_rate"] <= 1.0
    assert "random_mean_return" in report


# --- ablations ------------------------------------------------------------------


def test_sweep_cells_mirror_the_ablation_tables():
    base = RunConfig()
    assert [label for label, _ in sweep_cells(base, "mu")] == ["off", "0.10", "0.25", "0.50", "0.75", "0.90"]
    assert [label for label, _ in sweep_cells(base, "kd")] == ["L_Q", "L_B+L_Q+L_F"]
    assert [label for label, _ in sweep_cells(base, "state")] == ["personalized", "raw"]
    for sweep in ("mu", "kd", "state"):
        flat = base.to_flat()
        for _, overrides in sweep_cells(base, sweep):
            changed = {k for k, v in base.replace(**overrides).to_flat().items() if v != flat[k]}
            assert changed <= SWEEP_FIELDS[sweep]
    with pytest.raises(ConfigError):
        sweep_cells(base, "lr")


def test_ablate_writes_complete_tables(tiny_config, tmp_path):
    base = parse_config(tiny_config, {"optim.total_steps": 40, "optim.eval_interval": 0})
    path = ablate(base, ["mu", "kd", "state"], [0, 1], tmp_path / "abl")
    rows = list(__import__("csv").DictReader(path.open()))
    assert tuple(rows[0].keys()) == ABLATION_COLUMNS
    by_sweep = {s: [r for r in rows if r["sweep"] == s] for s in ("mu", "kd", "state")}
    assert [r["mu"] for r in by_sweep["mu"]] == ["off", "0.10", "0.25", "0.50", "0.75", "0.90"]
    assert [r["idm"] for r in by_sweep["mu"]] == ["0", "1", "1", "1", "1", "1"]
    assert [(r["L_B"], r["L_Q"], r["L_F"]) for r in by_sweep["kd"]] == [("0", "1", "0"), ("1", "1", "1")]
    assert [r["state"] for r in by_sweep["state"]] == ["personalized", "raw"]
    assert all(r["seeds"] == "0 1" and r["final_eval_return"] != "" for r in rows)
    with pytest.raises(ConfigError, match="empty sweep"):
        ablate(base, [], [0], tmp_path / "x")


# --- plot data ------------------------------------------------------------------


def test_smoothing_and_aggregation_examples():
    np.testing.assert_array_equal(smooth(np.full(25, 3.5)), np.full(25, 3.5))
    np.testing.assert_allclose(smooth(np.arange(12.0), window=10)[-1], np.mean(np.arange(2.0, 12.0)))
    x = np.array([0.0, 1.0])
    _, med, lo, hi = aggregate([(x, np.array([1.0, 1.0])), (x, np.array([2.0, 2.0])), (x, np.array([3.0, 3.0]))])
    assert med.tolist() == [2.0, 2.0] and lo.tolist() == [1.0, 1.0] and hi.tolist() == [3.0, 3.0]
    y = np.array([4.0, 5.0])
    _, med, lo, hi = aggregate([(x, y)])
    assert med.tolist() == lo.tolist() == hi.tolist() == y.tolist()


def test_plot_files(tiny_config, tmp_path, capsys):
    paths = [train(parse_config(tiny_config, {"seed": s}), tmp_path / f"s{s}").metrics_path for s in range(2)]
    assert cli.main(["plot", *map(str, paths), "--out", str(tmp_path / "plots")]) == 0
    written = capsys.readouterr().out.split()
    assert str(tmp_path / "plots" / "episode_return.tsv") in written
    lines = (tmp_path / "plots" / "episode_return.tsv").read_text().splitlines()
    assert lines[0].startswith("# ddnet-metrics/1") and lines[1] == "step\tmedian\tmin\tmax"
    for ln in lines[2:]:
        _, med, lo, hi = map(float, ln.split("\t"))
        assert lo <= med <= hi


def test_plot_rejects_foreign_files(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("step,return\n1,2\n")
    with pytest.raises(SchemaError):
        plot_data([bad], tmp_path / "out")
    assert cli.main(["plot", str(bad)]) == 1
