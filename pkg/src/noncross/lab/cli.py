"""Command line entry point: ``noncross {train,sample,eval,sweep,probe,plot}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..metrics import continuity_probe
from .config import ExperimentConfig, load_config
from .experiment import (
    BASELINE,
    evaluate,
    initial_noise,
    run_experiment,
    run_sampler,
    train_model,
    write_outputs,
)
from .plots import export_plots

PROBE_WEIGHTS = [0.0, 0.01, 0.05, 0.1, 0.2, 0.5]


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out_dir:
        cfg = replace(cfg, out_dir=args.out_dir)
    return cfg


def cmd_train(args):
    cfg = _config(args)
    out = cfg.resolved_out_dir()
    which = [BASELINE, "noncross"] if args.method == "both" else [args.method]
    for w in which:
        st = train_model(cfg, w, out)
        print(f"{w}: {st.step} steps -> {out / 'checkpoints' / (w + '.ckpt')}")


def cmd_sample(args):
    cfg = _config(args)
    out = cfg.resolved_out_dir()
    which = BASELINE if args.strategy == "baseline" else "noncross"
    st = train_model(cfg, which, out)
    strategy = "zero" if which == BASELINE else args.strategy
    traj = run_sampler(cfg, st.net, strategy, args.steps, initial_noise(cfg, args.n))
    doc = {"config_hash": cfg.config_hash, **traj.to_dict()}
    doc.pop("eps_hats")
    text = json.dumps(doc) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_eval(args):
    cfg = _config(args)
    out = cfg.resolved_out_dir()
    models = {BASELINE: train_model(cfg, BASELINE, out), "noncross": train_model(cfg, "noncross", out)}
    reports, trajs = evaluate(cfg, models)
    write_outputs(cfg, out, reports, trajs)
    _print_reports(reports)


def cmd_sweep(args):
    cfg = _config(args)
    _print_reports(run_experiment(cfg))


def cmd_probe(args):
    cfg = _config(args)
    if not cfg.schedule.discrete:
        raise SystemExit("probe needs a discrete (linear or cosine) schedule")
    out = cfg.resolved_out_dir()
    which = BASELINE if args.strategy == "baseline" else "noncross"
    st = train_model(cfg, which, out)
    strategy = "zero" if which == BASELINE else args.strategy
    n_steps = args.steps or cfg.schedule.T
    table = continuity_probe(
        st.net, cfg.schedule.build(), strategy, args.inject, PROBE_WEIGHTS, args.n_seeds,
        n_steps=n_steps, seed=cfg.seed,
    )
    lines = ["w,mean_displacement"] + [f"{w!r},{d!r}" for w, d in table.items()]
    (out / f"probe_{args.strategy}.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_plot(args):
    cfg = _config(args)
    for p in export_plots(cfg.resolved_out_dir()):
        print(p)


def _print_reports(reports):
    print(f"{'method':<28}{'N':>6}{'IFC':>10}{'OOD':>8}{'fidelity':>10}")
    for r in reports:
        print(f"{r.method:<28}{r.n_steps:>6}{r.ifc:>10.3f}{r.ood_rate:>8.3f}{r.fidelity:>10.4f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noncross", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def verb(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="experiment JSON (defaults to the built-in toy config)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out-dir", default=None, help="overrides config out_dir and $NONCROSS_OUT_DIR")
        sp.set_defaults(fn=fn)
        return sp

    t = verb("train", cmd_train, "train baseline and/or non-cross models")
    t.add_argument("--method", choices=["both", BASELINE, "noncross"], default="both")
    s = verb("sample", cmd_sample, "sample one trajectory batch")
    s.add_argument("--strategy", default="prev_step_pred",
                   help="baseline, zero, groundtruth_eps, prev_step_pred or current_step_pred")
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("-n", type=int, default=None)
    s.add_argument("--output", default=None)
    verb("eval", cmd_eval, "score existing (or freshly trained) models on the grid")
    verb("sweep", cmd_sweep, "train, sample and score the whole grid")
    pr = verb("probe", cmd_probe, "perturbation continuity probe (discrete schedules)")
    pr.add_argument("--strategy", default="baseline")
    pr.add_argument("--inject", type=int, default=0, help="index into the sampler's step list")
    pr.add_argument("--steps", type=int, default=None)
    pr.add_argument("--n-seeds", type=int, default=200)
    verb("plot", cmd_plot, "render SVG views of a finished run")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    args.fn(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
