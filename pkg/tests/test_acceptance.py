"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line; ``conftest.py`` prints the lines at the
end of the session. Criterion 6 trains three desk-scale runs and is marked
slow (about an hour on one core). Run with::

    pytest tests/test_acceptance.py
"""

import functools
import time
from pathlib import Path

import numpy as np
import pytest

import test_gradients
from ddnet import numerics as nx
from ddnet.config import parse_config
from ddnet.ddn import compute_kd_losses, ggn_forward, idm_intrinsic_reward, lpn_forward, total_reward
from ddnet.env import N_ACTIONS
from ddnet.experiment import ABLATION_COLUMNS, ablate, load_model, train
from ddnet.training import Learner, TrainSettings, epsilon, random_baseline
from test_ddn import (
    N,
    U,
    constant_state_batch,
    idm_novelty_run,
    make_idm,
    make_pair,
    mirror_lpn,
    test_kd_step_leaves_ggn_untouched_and_td_step_leaves_lpn_untouched as kd_step_isolation,
)
from test_env import test_exhaustive_oracle_3x3 as env_oracle
from test_networks import qmix_monotonicity_violations, vdn_igm_violations
from test_numerics import OPS, _check_op
from test_training import filled_buffer, model

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS: list[str] = []


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                RESULTS.append(f"FAIL  criterion {number}: {title} ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})")
                print(RESULTS[-1])
                raise
            RESULTS.append(f"PASS  criterion {number}: {title}" + (f" ({detail})" if detail else ""))
            print(RESULTS[-1])

        return run

    return wrap


@criterion(1, "analytic gradients match central differences")
def test_gradient_correctness():
    start = time.perf_counter()
    for name, (make, fn) in sorted(OPS.items()):
        rng = np.random.default_rng(len(name))
        for _ in range(100):
            _check_op(make, fn, rng, 1e-4)
    for mixer in ("vdn", "qmix"):
        for mode in ("personalized", "raw", "local"):
            test_gradients.test_global_loss_graph(mixer, mode)
    for mode in ("personalized", "raw"):
        test_gradients.test_local_loss_graph(mode)
    test_gradients.test_idm_loss_graph()
    elapsed = time.perf_counter() - start
    assert elapsed < 60, f"suite took {elapsed:.1f}s"
    return f"{len(OPS)} ops and 9 loss graphs in {elapsed:.1f}s"


@criterion(2, "IGM for VDN and monotonicity for QMIX")
def test_igm_and_monotonicity():
    assert vdn_igm_violations(np.random.default_rng(20)) == 0
    perturb, grad = qmix_monotonicity_violations(np.random.default_rng(21))
    assert (perturb, grad) == (0, 0)
    return "0 violations in 1000 tables and 1000 points"


@criterion(3, "distillation identities")
def test_distillation_identities():
    ggn, lpn = make_pair(30)
    mirror_lpn(ggn, lpn)
    batch = constant_state_batch(30)
    lpn.observation.base.data = batch.states[0, 0].copy()
    kd = compute_kd_losses(ggn_forward(batch, ggn), lpn_forward(batch, lpn), batch.mask)
    worst = max(abs(v) for v in kd.values().values())
    assert worst < 1e-10

    class Out:
        def __init__(self, rng, shape=(2, 3, N)):
            self.features = nx.tensor(rng.normal(size=(*shape, 4)) * 5)
            self.f_mid = nx.tensor(rng.normal(size=(*shape, 5)) * 5)
            self.q = nx.tensor(rng.normal(size=(*shape, U)) * 5)

    for seed in range(1000):
        rng = np.random.default_rng(seed)
        mask = (rng.random((2, 3)) < 0.7).astype(float)
        kd = compute_kd_losses(Out(rng), Out(rng), mask, temperature=float(rng.uniform(0.1, 10)))
        assert all(v >= 0 for v in kd.values().values()), seed
    kd_step_isolation()
    return f"mirrored max |L| = {worst:.1e}"


@criterion(4, "IDM novelty and the mu = 0 reduction")
def test_idm_novelty():
    runs = [idm_novelty_run(seed) for seed in range(10)]
    reductions = [1 - end / start for start, end, _ in runs]
    assert min(reductions) >= 0.9
    trained = np.median([end for _, end, _ in runs])
    novel = np.median([n for _, _, n in runs])
    assert novel > trained

    idm = make_idm(mu=0.0)
    states = np.random.default_rng(0).random((50, 7))
    r = np.random.default_rng(1).normal(size=50)
    r_i, _ = idm_intrinsic_reward(states, idm, np.random.default_rng(2))
    assert np.array_equal(total_reward(r, r_i), r)
    reports = {}
    for key, kw in {"off": dict(idm=False), "mu0": dict(idm=True, mu=0.0)}.items():
        learner = Learner(model(4, **kw), TrainSettings(batch_size=4), np.random.default_rng(0))
        reports[key] = learner.update(filled_buffer(4).sample(4, np.random.default_rng(1), N_ACTIONS))
    assert reports["off"]["L_global"] == reports["mu0"]["L_global"]
    return f"min reduction {min(reductions):.3f}, median held-out/trained {novel / trained:.1f}x"


@criterion(5, "environment matches the brute-force oracle")
def test_environment_oracle():
    env_oracle()
    return "50 states x 36 joint actions"


def desk_run(path, out_dir):
    cfg = parse_config(path)
    start = time.perf_counter()
    summary = train(cfg, out_dir)
    return cfg, summary, time.perf_counter() - start


@pytest.mark.slow
@criterion(6, "desk-scale Predator-Prey learning")
def test_desk_learning(tmp_path):
    limit = 30 * 60
    vdn_cfg, vdn, vdn_time = desk_run(CONFIGS / "desk_vdn.yaml", tmp_path / "vdn")
    ddn_cfg, ddn, ddn_time = desk_run(CONFIGS / "desk.yaml", tmp_path / "ddn")
    net, _ = load_model(vdn.checkpoint_path)
    rnd = random_baseline(vdn_cfg.env, net, vdn_cfg.optim.eval_episodes, vdn_cfg.seed + 1_000_003).mean_return
    detail = (
        f"random {rnd:.2f}, VDN {vdn.final_eval_return:.2f} in {vdn_time / 60:.1f} min, "
        f"DDN LPN {ddn.final_eval_return:.2f} / GGN {ddn.final_ggn_return:.2f} in {ddn_time / 60:.1f} min"
    )
    print(detail)
    assert vdn_time <= limit and ddn_time <= limit, detail
    assert vdn.final_eval_return >= 3 * rnd, "(a) " + detail
    assert ddn.final_eval_return >= vdn.final_eval_return - 0.1 * abs(vdn.final_eval_return), "(b) " + detail
    assert ddn.final_eval_return >= 0.7 * ddn.final_ggn_return, "(c) " + detail
    return detail


@criterion(7, "ablation tables are complete")
def test_ablation_structure(tmp_path):
    base = parse_config(
        None,
        {
            "env.grid_size": 5,
            "env.n_predators": 3,
            "env.n_prey": 1,
            "env.episode_limit": 10,
            "algo.agent_hidden": 8,
            "algo.fusion_dim": 4,
            "algo.generator_hidden": 8,
            "algo.mixing_dim": 4,
            "algo.hyper_dim": 8,
            "algo.idm_hidden": 8,
            "algo.idm_out": 8,
            "optim.batch_size": 2,
            "optim.total_steps": 30,
            "optim.eval_episodes": 1,
        },
    )
    path = ablate(base, ["kd", "state", "mu"], [0], tmp_path)
    import csv

    with path.open() as fh:
        reader = csv.DictReader(fh)
        assert tuple(reader.fieldnames) == ABLATION_COLUMNS
        rows = list(reader)
    cells = [(r["sweep"], r["setting"]) for r in rows]
    assert cells == [
        ("kd", "L_Q"),
        ("kd", "L_B+L_Q+L_F"),
        ("state", "personalized"),
        ("state", "raw"),
        *[("mu", m) for m in ("off", "0.10", "0.25", "0.50", "0.75", "0.90")],
    ]
    assert all(v != "" for r in rows for v in r.values())
    return f"{len(rows)} rows"


@criterion(8, "identical config and seed give byte-identical metrics")
def test_determinism(tmp_path):
    cfg = parse_config(
        None,
        {
            "env.grid_size": 5,
            "env.n_predators": 3,
            "env.n_prey": 1,
            "env.episode_limit": 20,
            "optim.batch_size": 4,
            "optim.total_steps": 300,
            "optim.eval_interval": 100,
            "optim.eval_episodes": 2,
            "seed": 11,
        },
    )
    a = train(cfg, tmp_path / "a").metrics_path.read_bytes()
    b = train(cfg, tmp_path / "b").metrics_path.read_bytes()
    assert a == b
    return f"{len(a)} bytes"


@criterion(9, "exploration schedule and defaults")
def test_schedule_fidelity(tmp_path):
    assert epsilon(0) == 1.0
    assert epsilon(50_000) == pytest.approx(0.05, abs=1e-15)
    steps = np.arange(0, 50_001, 500)
    values = np.array([epsilon(int(s)) for s in steps])
    np.testing.assert_allclose(values, 1.0 - 0.95 * steps / 50_000, atol=1e-15)
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    cfg = parse_config(empty)
    assert (cfg.optim.lr, cfg.optim.gamma) == (5e-4, 0.99)
    assert (cfg.optim.eps_start, cfg.optim.eps_end, cfg.optim.eps_anneal_steps) == (1.0, 0.05, 50_000)
