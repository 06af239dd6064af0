"""Training steps: bootstrap non-cross DDPM, baseline DDPM, and toy velocity flows.

Every step function takes an explicit ``numpy.random.Generator`` and draws,
in order: timesteps, noise (DDPM only), then the per-example bootstrap
uniforms.  Training loops derive a fresh generator per step from
``(seed, step)`` so two trainers that share a seed see identical data even
when one of them draws extra bootstrap numbers.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .denoiser import ConditionalDenoiser, forward, forward_on_tape
from .errors import ConfigError, ContractError, DimensionError, TrainingDiverged
from .numerics import AdamState, Tape, Var, adam_step, backward
from .schedule import NoiseSchedule, predict_x0, q_sample

MODES = ("ddpm_eps", "toy_velocity")


@dataclass
class TrainConfig:
    steps: int = 20_000
    batch_size: int = 256
    lr: float = 1e-3
    mode: str = "toy_velocity"
    conditioned: bool = True
    bootstrap_p: float = 0.5
    cosine_decay: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.bootstrap_p <= 1.0:
            raise ConfigError(f"bootstrap_p must be in [0, 1], got {self.bootstrap_p}")
        if self.steps <= 0 or self.batch_size <= 0:
            raise ConfigError("steps and batch_size must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass
class FlowPair:
    """A target point ``x0`` and a source point ``x1``; rows form a batch."""

    x0: np.ndarray
    x1: np.ndarray

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.x1 = np.asarray(self.x1, dtype=np.float64)
        if self.x0.shape != self.x1.shape:
            raise DimensionError(f"x0 {self.x0.shape} and x1 {self.x1.shape} differ")


@dataclass
class TrainState:
    net: ConditionalDenoiser
    opt: AdamState
    step: int = 0

    @classmethod
    def fresh(cls, net: ConditionalDenoiser, lr: float = 1e-3) -> "TrainState":
        return cls(net, AdamState.for_params(net.params, lr=lr))


class StepResult(NamedTuple):
    loss: float
    case1_fraction: float


def sq_error_loss(pred: Var, target: np.ndarray) -> Var:
    """Batch mean of the per-row squared Euclidean error."""
    return (pred - target).square().sum() * (1.0 / target.shape[0])


def loss_and_grads(net: ConditionalDenoiser, x_in, cond, t_norm, target):
    tape = Tape()
    pred = forward_on_tape(net, tape, x_in, cond, t_norm)
    loss = sq_error_loss(pred, target)
    if not math.isfinite(float(loss.value)):
        return float(loss.value), None
    return float(loss.value), backward(tape, loss)


def _apply(state: TrainState, grads, loss: float, lr: float | None) -> float:
    if grads is None or not math.isfinite(loss):
        raise TrainingDiverged(state.step, loss)
    state.net.params, state.opt = adam_step(state.net.params, grads, state.opt, lr=lr)
    state.step += 1
    return loss


def _guarded(step_fn):
    """Report any NaN/Inf hit inside a step as divergence at the current step."""

    @functools.wraps(step_fn)
    def wrapper(state, *args, **kwargs):
        try:
            return step_fn(state, *args, **kwargs)
        except FloatingPointError as exc:
            raise TrainingDiverged(state.step, float("nan")) from exc

    return wrapper


def bootstrap_condition(net, x_in, t_norm, u, bootstrap_p) -> tuple[np.ndarray, np.ndarray]:
    """Zero condition where ``u <= p`` (case 1); else the net's own zero-condition output.

    The case-2 prediction is computed outside any tape, so no gradient flows
    back through it.  Returns the condition and the case-1 mask.
    """
    case1 = u <= bootstrap_p
    cond = np.zeros_like(x_in)
    if not case1.all():
        rows = ~case1
        t_rows = t_norm[rows] if np.ndim(t_norm) else t_norm
        cond[rows] = forward(net, x_in[rows], None, t_rows)
    return cond, case1


def _draw_ddpm(sched: NoiseSchedule, x0: np.ndarray, rng: np.random.Generator):
    t = rng.integers(0, sched.T, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    return t, eps, q_sample(sched, x0, eps, t), t / sched.T


class NoncrossBatch(NamedTuple):
    x_t: np.ndarray
    eps: np.ndarray
    t_norm: np.ndarray
    cond: np.ndarray
    case1: np.ndarray


def noncross_batch(net, sched, x0, rng, bootstrap_p=0.5) -> NoncrossBatch:
    """Draw t, noise and bootstrap cases, and build the (detached) condition."""
    x0 = np.asarray(x0, dtype=np.float64)
    _, eps, x_t, t_norm = _draw_ddpm(sched, x0, rng)
    u = rng.random(x0.shape[0])
    cond, case1 = bootstrap_condition(net, x_t, t_norm, u, bootstrap_p)
    return NoncrossBatch(x_t, eps, t_norm, cond, case1)


@_guarded
def train_step_noncross(state, sched, x0, rng, bootstrap_p=0.5, lr=None) -> StepResult:
    net = state.net
    if not net.conditional:
        raise ContractError("non-cross training needs a conditional denoiser")
    b = noncross_batch(net, sched, x0, rng, bootstrap_p)
    loss, grads = loss_and_grads(net, b.x_t, b.cond, b.t_norm, b.eps)
    return StepResult(_apply(state, grads, loss, lr), float(b.case1.mean()))


@_guarded
def train_step_ddpm_baseline(state, sched, x0, rng, lr=None) -> StepResult:
    """Plain epsilon-prediction step.  A conditional net is fed the zero condition."""
    x0 = np.asarray(x0, dtype=np.float64)
    _, eps, x_t, t_norm = _draw_ddpm(sched, x0, rng)
    loss, grads = loss_and_grads(state.net, x_t, None, t_norm, eps)
    return StepResult(_apply(state, grads, loss, lr), 1.0)


def interpolate(pairs: FlowPair, t) -> np.ndarray:
    """Straight-line point ``t x1 + (1 - t) x0``; ``t`` is a scalar or one value per row."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim:
        t = t[:, None]
    return t * pairs.x1 + (1.0 - t) * pairs.x0


@_guarded
def train_step_toy(state, pairs: FlowPair, conditioned: bool, rng, bootstrap_p=0.5, lr=None) -> StepResult:
    """Velocity regression on ``x_t = t x1 + (1 - t) x0`` with target ``x1 - x0``."""
    net = state.net
    n = pairs.x0.shape[0]
    t = rng.random(n)
    x_t = interpolate(pairs, t)
    target = pairs.x1 - pairs.x0
    if conditioned:
        if not net.conditional:
            raise ContractError("conditioned toy training needs a conditional denoiser")
        u = rng.random(n)
        cond, case1 = bootstrap_condition(net, x_t, t, u, bootstrap_p)
        frac = float(case1.mean())
    else:
        cond, frac = None, 1.0
    loss, grads = loss_and_grads(net, x_t, cond, t, target)
    return StepResult(_apply(state, grads, loss, lr), frac)


def make_crossing_pair(z, t: int, sched: NoiseSchedule, eps_a=None, eps_b=None):
    """Two (x0, noise) pairs that both noise to exactly ``z`` at step ``t``.

    Default noises are ``+1`` and ``-1`` in every coordinate.
    """
    z = np.asarray(z, dtype=np.float64)
    sched.check_t(t)
    eps_a = np.ones_like(z) if eps_a is None else np.asarray(eps_a, dtype=np.float64)
    eps_b = -np.ones_like(z) if eps_b is None else np.asarray(eps_b, dtype=np.float64)
    if np.array_equal(eps_a, eps_b):
        raise ContractError("crossing noises must differ")
    a = FlowPair(predict_x0(sched, z, eps_a, t), eps_a)
    b = FlowPair(predict_x0(sched, z, eps_b, t), eps_b)
    return a, b


def lr_at(cfg: TrainConfig, step: int) -> float:
    if not cfg.cosine_decay:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / cfg.steps))


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def train(
    state: TrainState,
    cfg: TrainConfig,
    batch_fn: Callable[[np.random.Generator, int], FlowPair],
    sched: NoiseSchedule | None = None,
    method: str = "noncross",
    log: Callable[[dict], None] | None = None,
) -> list[float]:
    """Run ``cfg.steps`` steps and return the loss trace.

    ``method`` is ``noncross``, ``baseline`` or ``zero_condition`` (baseline
    update on a conditional net).  ``batch_fn(rng, batch_size)`` supplies
    data; DDPM modes use its ``x0`` rows.
    """
    if method not in ("noncross", "baseline", "zero_condition"):
        raise ConfigError(f"unknown training method {method!r}")
    if cfg.mode == "ddpm_eps" and sched is None:
        raise ConfigError("ddpm_eps training needs a noise schedule")
    losses = []
    start = state.step
    for step in range(start, cfg.steps):
        rng = step_rng(cfg.seed, step)
        batch = batch_fn(rng, cfg.batch_size)
        lr = lr_at(cfg, step)
        if cfg.mode == "toy_velocity":
            res = train_step_toy(state, batch, method == "noncross", rng, cfg.bootstrap_p, lr)
        elif method == "noncross":
            res = train_step_noncross(state, sched, batch.x0, rng, cfg.bootstrap_p, lr)
        else:
            res = train_step_ddpm_baseline(state, sched, batch.x0, rng, lr)
        losses.append(res.loss)
        if log is not None:
            log({"step": step, "loss": res.loss, "case1_fraction": res.case1_fraction})
    return losses


class JsonlLog:
    """Line-delimited JSON training log."""

    def __init__(self, path):
        self._fh = open(path, "w")

    def __call__(self, record: dict):
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
