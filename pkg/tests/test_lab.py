import csv
import json
import re
from dataclasses import replace

import numpy as np
import pytest

from noncross.denoiser import forward, init_denoiser
from noncross.errors import ConfigError
from noncross.lab import checkpoint
from noncross.lab.cli import main
from noncross.lab.config import (
    OUT_DIR_ENV,
    DatasetConfig,
    ExperimentConfig,
    SampleConfig,
    ScheduleConfig,
    discrete_config,
    load_config,
    toy_config,
)
from noncross.lab.datasets import generate_dataset, mode_centers, sample_target
from noncross.lab.experiment import methods, run_experiment, train_model
from noncross.lab.plots import export_plots
from noncross.sampling import sample_toy
from noncross.schedule import make_cosine
from noncross.training import TrainConfig, TrainState, train_step_noncross


def small_toy(**kw):
    base = dict(
        train=TrainConfig(steps=150, batch_size=32),
        sample=SampleConfig(strategies=["prev_step_pred", "current_step_pred"], step_counts=[2, 5],
                            n_samples=60, n_trajectories=4),
        hidden_dims=[16, 16, 16],
        seed=3,
    )
    base.update(kw)
    return toy_config(**base)


def small_discrete(**kw):
    return discrete_config(
        T=20,
        train=TrainConfig(steps=100, batch_size=32, mode="ddpm_eps"),
        sample=SampleConfig(step_counts=[20, 5], n_samples=40, n_trajectories=3),
        hidden_dims=[16, 16, 16],
        **kw,
    )


# datasets ------------------------------------------------------------------


def test_ring_modes_recovered_by_nearest_center():
    ds = DatasetConfig("gaussian_ring", sigma=0.2, k=6, ring_radius=4.0)
    pts = sample_target(ds, np.random.default_rng(0), 10_000)
    angles = 2 * np.pi * np.arange(6) / 6
    analytic = 4.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    nearest = np.argmin(np.linalg.norm(pts[:, None] - analytic[None], axis=-1), axis=1)
    for j in range(6):
        assert np.linalg.norm(pts[nearest == j].mean(axis=0) - analytic[j]) < 0.05


def test_two_gaussian_shares():
    ds = DatasetConfig("two_gaussians", sigma=0.2, separation=2.0)
    np.testing.assert_array_equal(mode_centers(ds), [[-2.0, 0.0], [2.0, 0.0]])
    pts = sample_target(ds, np.random.default_rng(1), 10_000)
    share = np.mean(pts[:, 0] > 0)
    assert abs(share - 0.5) <= 0.02


def test_moons_points_stay_near_arcs():
    ds = DatasetConfig("moons", sigma=0.02)
    pts = sample_target(ds, np.random.default_rng(2), 2000)
    d = np.linalg.norm(pts[:, None] - mode_centers(ds)[None], axis=-1).min(axis=1)
    assert np.quantile(d, 0.99) < 0.15


def test_dataset_is_reproducible():
    cfg = toy_config(seed=5)
    a, b = generate_dataset(cfg, n=500), generate_dataset(cfg, n=500)
    assert np.array_equal(a.x0, b.x0) and np.array_equal(a.x1, b.x1)
    c = generate_dataset(cfg, n=500, seed=6)
    assert not np.array_equal(a.x0, c.x0)


def test_displaced_source():
    cfg = toy_config(dataset=DatasetConfig(source_shift=[0.0, -4.0]))
    pairs = generate_dataset(cfg, n=5000)
    assert abs(pairs.x1[:, 1].mean() + 4.0) < 0.1


def test_unknown_dataset():
    with pytest.raises(ConfigError):
        DatasetConfig("spirals")


# config --------------------------------------------------------------------


def test_config_round_trip_and_hash(tmp_path):
    cfg = small_discrete(dataset=DatasetConfig("gaussian_ring", k=5))
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg and again.config_hash == cfg.config_hash
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg
    assert replace(cfg, out_dir="elsewhere").config_hash == cfg.config_hash
    assert replace(cfg, seed=cfg.seed + 1).config_hash != cfg.config_hash


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        small_discrete().__class__(
            schedule=ScheduleConfig("linear", 10), train=TrainConfig(mode="ddpm_eps"),
            sample=SampleConfig(step_counts=[20]),
        )
    with pytest.raises(ConfigError):
        ExperimentConfig(arch="unconditional")
    with pytest.raises(ConfigError):
        SampleConfig(step_counts=[0])


def test_discrete_default_grid():
    assert discrete_config(T=1000).sample.step_counts == [1000, 100, 50, 20, 10, 5]
    assert toy_config().sample.step_counts == [2, 5, 10, 100]


def test_out_dir_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "env"))
    assert toy_config().resolved_out_dir() == tmp_path / "env"


# checkpoints ---------------------------------------------------------------


def _trained_state(arch="control_branch"):
    net = init_denoiser(arch, 2, np.random.default_rng(0), hidden_dims=[8, 8, 8])
    st = TrainState.fresh(net)
    sched = make_cosine(30)
    for i in range(3):
        train_step_noncross(st, sched, np.random.default_rng(i).standard_normal((16, 2)), np.random.default_rng(i))
    return st, sched


def test_checkpoint_save_load_save_is_byte_identical(tmp_path):
    st, sched = _trained_state()
    ck = checkpoint.Checkpoint(st, small_toy().to_dict(), sched)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    checkpoint.save(p1, ck)
    loaded = checkpoint.load(p1)
    checkpoint.save(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.state.step == 3 and loaded.config == ck.config
    assert np.array_equal(loaded.schedule.alpha_bar, sched.alpha_bar)
    x, c, t = np.random.default_rng(9).standard_normal((5, 2)), np.ones((5, 2)), np.linspace(0, 1, 5)
    assert np.array_equal(forward(loaded.state.net, x, c, t), forward(st.net, x, c, t))
    for k in st.opt.m:
        assert np.array_equal(loaded.state.opt.m[k], st.opt.m[k])


def test_checkpoint_rejects_corruption(tmp_path):
    st, sched = _trained_state()
    data = checkpoint.dumps(checkpoint.Checkpoint(st, {}, sched))
    with pytest.raises(ConfigError):
        checkpoint.loads(b"NOTACKPT" + data[8:])
    with pytest.raises(ConfigError):
        checkpoint.loads(data[:-8])


# end-to-end ----------------------------------------------------------------


def _metric_bytes(out):
    return {p.name: p.read_bytes() for p in sorted((out / "metrics").iterdir())}


def test_run_is_reproducible_and_idempotent(tmp_path):
    cfg = small_toy()
    r1 = run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    assert _metric_bytes(tmp_path / "a") == _metric_bytes(tmp_path / "b")
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()
    first = _metric_bytes(tmp_path / "a")
    r2 = run_experiment(cfg, tmp_path / "a")
    assert _metric_bytes(tmp_path / "a") == first
    assert [r.config_hash for r in r1] == [r.config_hash for r in r2] == [cfg.config_hash] * len(r1)


def test_comparison_table_has_a_row_per_cell(tmp_path):
    cfg = small_toy()
    reports = run_experiment(cfg, tmp_path)
    cells = {(r.method, r.n_steps) for r in reports}
    assert cells == {(m, n) for m in methods(cfg) for n in cfg.sample.step_counts}
    with (tmp_path / "sweep.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["N_steps", "method", "ifc", "ood_rate", "fidelity"]
    assert len(rows) == len(cells)
    with (tmp_path / "finals.csv").open() as fh:
        n_final = sum(1 for _ in csv.DictReader(fh))
    assert n_final == cfg.sample.n_samples * len(methods(cfg)) * len(cfg.sample.step_counts)
    for f in (tmp_path / "logs").iterdir():
        lines = f.read_text().splitlines()
        assert len(lines) == cfg.train.steps and "case1_fraction" in json.loads(lines[0])
    traj = json.loads((tmp_path / "trajectories" / "baseline_N5.json").read_text())
    assert set(traj) == {"config_hash", "step_times", "states", "x0_preds", "final"}
    assert len(traj["final"]) == cfg.sample.n_trajectories


def test_discrete_run(tmp_path):
    cfg = small_discrete()
    reports = run_experiment(cfg, tmp_path)
    assert {r.n_steps for r in reports} == {20, 5}
    assert all(0.0 <= r.ood_rate <= 1.0 and r.fidelity >= 0 for r in reports)


def test_unwritable_out_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        run_experiment(small_toy(), blocker / "run")


def test_baseline_redirects_between_step_counts():
    # a briefly trained baseline toy model ends in different places at N=2 and N=100
    cfg = toy_config(train=TrainConfig(steps=1500, batch_size=128), hidden_dims=[32, 32, 32], seed=1)
    st = train_model(cfg, "baseline")
    x1 = np.random.default_rng(0).standard_normal((400, 2))
    near_axis = np.abs(x1[:, 0]) < 0.3  # sources near the plane between the two modes
    shift = np.linalg.norm(sample_toy(st.net, "zero", 2, x1).final - sample_toy(st.net, "zero", 100, x1).final, axis=1)
    assert shift[near_axis].mean() > 0.1
    assert shift[near_axis].mean() > shift[~near_axis].mean()


# plots ---------------------------------------------------------------------


def test_plots_cover_every_point(tmp_path):
    cfg = small_toy()
    run_experiment(cfg, tmp_path)
    written = export_plots(tmp_path)
    names = {p.name for p in written}
    for m in methods(cfg):
        for n in cfg.sample.step_counts:
            assert f"scatter_{m}_N{n}.svg" in names
    assert "ifc_vs_n.svg" in names and "trajectories_N2.svg" in names
    svg = (tmp_path / "plots" / "scatter_baseline_N5.svg").read_text()
    cx = [float(v) for v in re.findall(r'cx="([-\d.]+)"', svg)]
    cy = [float(v) for v in re.findall(r'cy="([-\d.]+)"', svg)]
    assert len(cx) == cfg.sample.n_samples
    assert min(cx) >= 30 and max(cx) <= 370 and min(cy) >= 30 and max(cy) <= 370
    before = {p.name: p.read_bytes() for p in written}
    assert {p.name: p.read_bytes() for p in export_plots(tmp_path)} == before


def test_plots_refuse_empty_or_missing_runs(tmp_path):
    with pytest.raises(FileNotFoundError):
        export_plots(tmp_path)
    (tmp_path / "finals.csv").write_text("method,N_steps,index,x,y\n")
    (tmp_path / "sweep.csv").write_text("N_steps,method,ifc,ood_rate,fidelity\n")
    with pytest.raises(ValueError):
        export_plots(tmp_path)
    assert not (tmp_path / "plots").exists()


# CLI -----------------------------------------------------------------------


def test_cli_verbs(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(small_discrete().to_json())
    out = tmp_path / "run"
    common = ["--config", str(cfg_path), "--out-dir", str(out), "--seed", "4"]
    assert main(["train", *common]) == 0
    assert (out / "checkpoints" / "noncross.ckpt").exists()
    assert main(["sample", *common, "--steps", "5", "-n", "3", "--output", str(tmp_path / "s.json")]) == 0
    doc = json.loads((tmp_path / "s.json").read_text())
    assert len(doc["final"]) == 3 and len(doc["step_times"]) == 5
    assert main(["eval", *common]) == 0
    assert "noncross-prev_step_pred" in capsys.readouterr().out
    assert main(["probe", *common, "--n-seeds", "8", "--steps", "5", "--inject", "1"]) == 0
    probe = (out / "probe_baseline.csv").read_text().splitlines()
    assert probe[0] == "w,mean_displacement" and probe[1] == "0.0,0.0"
    assert main(["plot", *common]) == 0
    assert (out / "plots" / "ifc_vs_n.svg").exists()


def test_cli_sweep_default_config(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(small_toy().to_json())
    assert main(["sweep", "--config", str(cfg_path), "--out-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "sweep.csv").exists()
    assert "baseline" in capsys.readouterr().out


def test_cli_requires_a_verb():
    with pytest.raises(SystemExit):
        main([])
