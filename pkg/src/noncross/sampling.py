"""Deterministic DDIM sampling and toy Euler integration with condition strategies.

Strategies decide what the network sees as its condition at each step:

``zero``               always the zero tensor
``groundtruth_eps``    the initial noise the chain started from
``prev_step_pred``     the previous step's prediction (non-cross carryover)
``current_step_pred``  an extra zero-condition pass at the current step

The first step always uses the zero condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoiser import ConditionalDenoiser, forward
from .errors import ConfigError, ContractError, DimensionError
from .schedule import NoiseSchedule, predict_x0

STRATEGIES = ("zero", "groundtruth_eps", "prev_step_pred", "current_step_pred")


@dataclass
class Trajectory:
    """Per-step states, network outputs and clean-data estimates of a chain.

    Arrays have one row per chain when sampling a batch.
    """

    step_times: list
    states: list[np.ndarray] = field(default_factory=list)
    eps_hats: list[np.ndarray] = field(default_factory=list)
    x0_preds: list[np.ndarray] = field(default_factory=list)
    final: np.ndarray | None = None

    def __len__(self):
        return len(self.step_times)

    def to_dict(self) -> dict:
        return {
            "step_times": [float(t) if isinstance(t, float) else int(t) for t in self.step_times],
            "states": [s.tolist() for s in self.states],
            "eps_hats": [e.tolist() for e in self.eps_hats],
            "x0_preds": [p.tolist() for p in self.x0_preds],
            "final": None if self.final is None else self.final.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        arr = lambda xs: [np.asarray(x, dtype=np.float64) for x in xs]  # noqa: E731
        return cls(
            list(d["step_times"]), arr(d["states"]), arr(d["eps_hats"]), arr(d["x0_preds"]),
            None if d["final"] is None else np.asarray(d["final"], dtype=np.float64),
        )


def check_strategy(strategy: str, net: ConditionalDenoiser):
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy != "zero" and not net.conditional:
        raise ContractError(f"strategy {strategy!r} needs a conditional denoiser")


def ddim_step(sched: NoiseSchedule, x_t, eps_hat, t: int, t_prev: int) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``; ``t_prev=-1`` returns x0."""
    if t_prev > t or t_prev < -1:
        raise ContractError(f"times must descend: t={t}, t_prev={t_prev}")
    x0_hat = predict_x0(sched, x_t, eps_hat, t)
    if t_prev == -1:
        return x0_hat
    ab = sched.alpha_bar[t_prev]
    return np.sqrt(ab) * x0_hat + np.sqrt(1.0 - ab) * np.asarray(eps_hat, dtype=np.float64)


def time_grid(T: int, n_steps: int) -> list[int]:
    """``n_steps`` descending timesteps spread uniformly over ``T-1 .. 0``."""
    if not 1 <= n_steps <= T:
        raise ConfigError(f"need 1 <= N <= T, got N={n_steps}, T={T}")
    if n_steps == 1:
        return [T - 1]
    return [int(t) for t in np.round(np.linspace(T - 1, 0, n_steps))]


def _predict(net, strategy, x, t_norm, first: bool, prev, x_init):
    """Network output at one step and the condition it was given."""
    if first or strategy == "zero":
        cond = None
    elif strategy == "prev_step_pred":
        cond = prev
    elif strategy == "groundtruth_eps":
        cond = x_init
    else:
        cond = forward(net, x, None, t_norm)
    return forward(net, x, cond, t_norm), cond


def sample(
    net: ConditionalDenoiser,
    sched: NoiseSchedule,
    strategy: str,
    n_steps: int,
    x_T,
    perturb=None,
) -> Trajectory:
    """DDIM chain from ``x_T``.  ``x_T`` is one point or a batch of rows.

    ``perturb(step_index, eps_hat) -> eps`` may replace the noise used for
    re-noising at any step; the clean estimate always uses the network output.
    """
    check_strategy(strategy, net)
    x = np.asarray(x_T, dtype=np.float64)
    if x.shape[-1] != net.data_dim:
        raise DimensionError(f"x_T width {x.shape[-1]} != data_dim {net.data_dim}")
    times = time_grid(sched.T, n_steps)
    traj = Trajectory(times)
    x_init, prev = x, None
    for i, t in enumerate(times):
        eps_hat, _ = _predict(net, strategy, x, t / sched.T, i == 0, prev, x_init)
        x0_hat = predict_x0(sched, x, eps_hat, t)
        traj.states.append(x)
        traj.eps_hats.append(eps_hat)
        traj.x0_preds.append(x0_hat)
        t_prev = times[i + 1] if i + 1 < len(times) else -1
        renoise = eps_hat if perturb is None else perturb(i, eps_hat)
        if t_prev == -1:
            x = x0_hat
        else:
            ab = sched.alpha_bar[t_prev]
            x = np.sqrt(ab) * x0_hat + np.sqrt(1.0 - ab) * renoise
        prev = eps_hat
    traj.final = x
    return traj


def sample_toy(net: ConditionalDenoiser, strategy: str, n_steps: int, x1) -> Trajectory:
    """Euler integration of ``dx/dt = v`` from ``t=1`` (source) down to ``t=0`` (target).

    ``x0_preds`` hold the straight-line endpoint ``x_t - t v`` at each step.
    """
    if n_steps < 1:
        raise ConfigError(f"need at least one step, got {n_steps}")
    check_strategy(strategy, net)
    x = np.asarray(x1, dtype=np.float64)
    if x.shape[-1] != net.data_dim:
        raise DimensionError(f"x1 width {x.shape[-1]} != data_dim {net.data_dim}")
    times = [1.0 - i / n_steps for i in range(n_steps)]
    traj = Trajectory(times)
    x_init, prev = x, None
    for i, t in enumerate(times):
        v, _ = _predict(net, strategy, x, t, i == 0, prev, x_init)
        traj.states.append(x)
        traj.eps_hats.append(v)
        traj.x0_preds.append(x - t * v)
        t_next = times[i + 1] if i + 1 < n_steps else 0.0
        x = x - (t - t_next) * v
        prev = v
    traj.final = x
    return traj
