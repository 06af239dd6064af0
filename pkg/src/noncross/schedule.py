"""Discrete DDPM noise schedules and the closed-form forward process.

Time is 0-based: ``t`` runs over ``0..T-1`` and ``T-1`` is the noisiest step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericGuardError

ALPHA_BAR_FLOOR = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size == 0:
            raise ConfigError("beta must be a non-empty 1-D array")
        if not np.all((beta > 0) & (beta < 1)):
            raise ConfigError("every beta must lie in (0, 1)")
        beta.setflags(write=False)
        alpha = 1.0 - beta
        alpha.setflags(write=False)
        alpha_bar = np.cumprod(alpha)
        alpha_bar.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def check_t(self, t: int) -> int:
        if not 0 <= t < self.T:
            raise IndexError(f"timestep {t} outside 0..{self.T - 1}")
        return int(t)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "beta": [float(b) for b in self.beta]}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(np.array(d["beta"], dtype=np.float64), d.get("kind", "custom"))


def make_linear(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T), kind="linear")


def make_cosine(T: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Squared-cosine alpha_bar curve; betas derived from successive ratios and clipped."""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")

    def f(u):
        return math.cos((u + s) / (1 + s) * math.pi / 2) ** 2

    betas = [min(1 - f((i + 1) / T) / f(i / T), max_beta) for i in range(T)]
    return NoiseSchedule(np.array(betas), kind="cosine")


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")


def _coef(sched: NoiseSchedule, t):
    """sqrt(alpha_bar) and sqrt(1 - alpha_bar) for a scalar t or a batch of t."""
    if np.ndim(t) == 0:
        ab = sched.alpha_bar[sched.check_t(t)]
        return math.sqrt(ab), math.sqrt(1.0 - ab)
    t = np.asarray(t)
    if t.min() < 0 or t.max() >= sched.T:
        raise IndexError(f"timesteps outside 0..{sched.T - 1}")
    ab = sched.alpha_bar[t][:, None]
    return np.sqrt(ab), np.sqrt(1.0 - ab)


def q_sample(sched: NoiseSchedule, x0, eps, t) -> np.ndarray:
    """Noisy sample x_t given clean data and noise.  ``t`` may be a per-row array."""
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    _check_pair(x0, eps)
    a, b = _coef(sched, t)
    return a * x0 + b * eps


def predict_x0(sched: NoiseSchedule, x_t, eps_hat, t) -> np.ndarray:
    x_t, eps_hat = np.asarray(x_t, dtype=np.float64), np.asarray(eps_hat, dtype=np.float64)
    _check_pair(x_t, eps_hat)
    a, b = _coef(sched, t)
    if np.min(a) ** 2 < ALPHA_BAR_FLOOR:
        raise NumericGuardError(f"alpha_bar below {ALPHA_BAR_FLOOR} at t={t}")
    return (x_t - b * eps_hat) / a
