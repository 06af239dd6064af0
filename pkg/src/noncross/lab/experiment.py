"""End-to-end runs: train baseline and non-cross models, sample every grid cell, score."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..denoiser import init_denoiser
from ..metrics import MetricReport, data_range_of, fidelity_proxy, ifc, ood_rate
from ..sampling import Trajectory, sample, sample_toy
from ..training import FlowPair, JsonlLog, TrainState, train
from . import checkpoint
from .config import ExperimentConfig
from .datasets import mode_centers, sample_pairs, sample_source, sample_target

log = logging.getLogger(__name__)

BASELINE = "baseline"
SWEEP_HEADER = ["N_steps", "method", "ifc", "ood_rate", "fidelity"]


def method_name(strategy: str) -> str:
    return f"noncross-{strategy}"


def methods(cfg: ExperimentConfig) -> list[str]:
    return [BASELINE] + [method_name(s) for s in cfg.sample.strategies]


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write_test"
    probe.write_text("")
    probe.unlink()
    return path


def _batch_fn(cfg: ExperimentConfig):
    def batch(rng, n) -> FlowPair:
        return sample_pairs(cfg.dataset, rng, n)

    return batch


def train_model(cfg: ExperimentConfig, which: str, out_dir: Path | None = None) -> TrainState:
    """Train (or reload) ``baseline`` or ``noncross`` for this config.

    Both models share the per-step data stream derived from ``cfg.seed``.
    """
    arch = "unconditional" if which == BASELINE else cfg.arch
    tcfg = replace(cfg.train, seed=cfg.seed)
    ckpt_path = None
    if out_dir is not None:
        ckpt_path = _ensure_dir(out_dir / "checkpoints") / f"{which}.ckpt"
        if ckpt_path.exists():
            ck = checkpoint.load(ckpt_path)
            if ck.config == cfg.to_dict() and ck.state.step == tcfg.steps:
                log.info("reusing %s", ckpt_path)
                return ck.state
    net = init_denoiser(arch, cfg.data_dim, np.random.default_rng([cfg.seed, 1]), cfg.hidden_dims)
    state = TrainState.fresh(net, tcfg.lr)
    sched = cfg.schedule.build()
    method = "baseline" if which == BASELINE else "noncross"
    if out_dir is None:
        train(state, tcfg, _batch_fn(cfg), sched, method)
    else:
        with JsonlLog(_ensure_dir(out_dir / "logs") / f"{which}.jsonl") as jlog:
            train(state, tcfg, _batch_fn(cfg), sched, method, log=jlog)
        checkpoint.save(ckpt_path, checkpoint.Checkpoint(state, cfg.to_dict(), sched))
    return state


def initial_noise(cfg: ExperimentConfig, n: int | None = None) -> np.ndarray:
    n = cfg.sample.n_samples if n is None else n
    rng = np.random.default_rng([cfg.seed, 0x5A3])
    if cfg.schedule.discrete:
        return rng.standard_normal((n, cfg.data_dim))
    return sample_source(cfg.dataset, rng, n)


def reference_set(cfg: ExperimentConfig, n: int | None = None) -> np.ndarray:
    n = cfg.sample.n_samples if n is None else n
    return sample_target(cfg.dataset, np.random.default_rng([cfg.seed, 0xEEF]), n)


def run_sampler(cfg: ExperimentConfig, net, strategy: str, n_steps: int, x_init) -> Trajectory:
    if cfg.schedule.discrete:
        return sample(net, cfg.schedule.build(), strategy, n_steps, x_init)
    return sample_toy(net, strategy, n_steps, x_init)


def evaluate(cfg: ExperimentConfig, models: dict[str, TrainState]):
    """Sample every (method, N) cell from shared start noise.

    Returns metric reports and the trajectories keyed by ``(method, N)``.
    """
    x_init = initial_noise(cfg)
    ref = reference_set(cfg)
    drange = data_range_of(ref)
    modes = mode_centers(cfg.dataset)
    reports, trajs = [], {}
    for method in methods(cfg):
        if method == BASELINE:
            net, strategy = models[BASELINE].net, "zero"
        else:
            net, strategy = models["noncross"].net, method[len("noncross-"):]
        for n in cfg.sample.step_counts:
            traj = run_sampler(cfg, net, strategy, n, x_init)
            trajs[(method, n)] = traj
            reports.append(MetricReport(
                ifc=ifc(traj, drange),
                ood_rate=ood_rate(traj.final, modes, cfg.dataset.radius),
                fidelity=fidelity_proxy(traj.final, ref),
                n_samples=cfg.sample.n_samples,
                config_hash=cfg.config_hash,
                method=method,
                n_steps=n,
            ))
    return reports, trajs


def consistency_table(cfg: ExperimentConfig, trajs) -> list[dict]:
    """Mean distance of each method's finals to its own largest-N finals."""
    n_ref = max(cfg.sample.step_counts)
    rows = []
    for method in methods(cfg):
        ref = trajs[(method, n_ref)].final
        for n in cfg.sample.step_counts:
            shift = np.linalg.norm(trajs[(method, n)].final - ref, axis=1).mean()
            rows.append({"method": method, "N_steps": n, "mean_final_shift": float(shift)})
    return rows


def _csv(rows: list[dict], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def _traj_export(cfg: ExperimentConfig, traj: Trajectory, k: int) -> dict:
    d = Trajectory(
        traj.step_times,
        [s[:k] for s in traj.states],
        [e[:k] for e in traj.eps_hats],
        [p[:k] for p in traj.x0_preds],
        traj.final[:k],
    ).to_dict()
    d.pop("eps_hats")
    return {"config_hash": cfg.config_hash, **d}


def write_outputs(cfg: ExperimentConfig, out_dir: Path, reports, trajs) -> None:
    _ensure_dir(out_dir)
    (out_dir / "config.json").write_text(cfg.to_json())
    mdir = _ensure_dir(out_dir / "metrics")
    tdir = _ensure_dir(out_dir / "trajectories")
    for r in reports:
        (mdir / f"{r.method}_N{r.n_steps}.json").write_text(r.to_json() + "\n")
        (tdir / f"{r.method}_N{r.n_steps}.json").write_text(
            json.dumps(_traj_export(cfg, trajs[(r.method, r.n_steps)], cfg.sample.n_trajectories)) + "\n"
        )
    sweep = [
        {"N_steps": r.n_steps, "method": r.method, "ifc": r.ifc, "ood_rate": r.ood_rate, "fidelity": r.fidelity}
        for r in reports
    ]
    (out_dir / "sweep.csv").write_text(_csv(sweep, SWEEP_HEADER))
    (out_dir / "consistency.csv").write_text(
        _csv(consistency_table(cfg, trajs), ["method", "N_steps", "mean_final_shift"])
    )
    finals = []
    for (method, n), traj in trajs.items():
        for i, p in enumerate(traj.final):
            finals.append({"method": method, "N_steps": n, "index": i, "x": float(p[0]), "y": float(p[1])})
    (out_dir / "finals.csv").write_text(_csv(finals, ["method", "N_steps", "index", "x", "y"]))


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> list[MetricReport]:
    """Train both models, sample the full grid, and write every artifact to ``out_dir``."""
    out_dir = Path(out_dir) if out_dir is not None else cfg.resolved_out_dir()
    _ensure_dir(out_dir)
    models = {
        BASELINE: train_model(cfg, BASELINE, out_dir),
        "noncross": train_model(cfg, "noncross", out_dir),
    }
    reports, trajs = evaluate(cfg, models)
    write_outputs(cfg, out_dir, reports, trajs)
    return reports
