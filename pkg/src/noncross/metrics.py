"""Sample-quality and flow-consistency metrics.

``ifc`` is the mean PSNR between every intermediate clean-data estimate of a
chain and the chain's final output; straight flows score the PSNR cap.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError, DimensionError
from .sampling import Trajectory, sample
from .schedule import NoiseSchedule

PSNR_CAP = 100.0
MSE_FLOOR = 1e-12


@dataclass
class MetricReport:
    ifc: float
    ood_rate: float
    fidelity: float
    n_samples: int
    config_hash: str
    method: str = ""
    n_steps: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ood_rate <= 1.0:
            raise ContractError(f"ood_rate {self.ood_rate} outside [0, 1]")
        if self.n_samples <= 0:
            raise ContractError("n_samples must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def _pair(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _psnr_from_mse(mse, data_range: float):
    mse = np.asarray(mse, dtype=np.float64)
    capped = mse < MSE_FLOOR
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(data_range**2 / np.where(capped, 1.0, mse))
    return np.where(capped, PSNR_CAP, db)


def psnr(a, b, data_range: float) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 when the inputs coincide."""
    if data_range <= 0:
        raise ContractError("data_range must be positive")
    a, b = _pair(a, b)
    return float(_psnr_from_mse(np.mean((a - b) ** 2), data_range))


def psnr_rows(a, b, data_range: float) -> np.ndarray:
    """PSNR of each row of two equally shaped batches."""
    if data_range <= 0:
        raise ContractError("data_range must be positive")
    a, b = _pair(a, b)
    return _psnr_from_mse(np.mean((a - b) ** 2, axis=-1), data_range)


def ifc(traj: Trajectory, data_range: float) -> float:
    """Inference-flow consistency; batched trajectories average the per-chain values."""
    if len(traj.x0_preds) == 0 or traj.final is None:
        raise ContractError("trajectory is empty")
    per_step = [psnr_rows(p, traj.final, data_range) for p in traj.x0_preds]
    return float(np.mean(np.mean(per_step, axis=0)))


def data_range_of(reference) -> float:
    """Largest per-coordinate spread of a reference set, floored at 1e-6."""
    ref = np.asarray(reference, dtype=np.float64)
    return max(float(np.max(ref.max(axis=0) - ref.min(axis=0))), 1e-6)


def ood_rate(samples, modes, radius: float) -> float:
    """Fraction of samples farther than ``radius`` from every mode centre."""
    samples = np.asarray(samples, dtype=np.float64)
    modes = np.asarray(modes, dtype=np.float64)
    if samples.size == 0:
        raise ContractError("no samples")
    if modes.size == 0 or radius <= 0:
        raise ContractError("need at least one mode and a positive radius")
    if samples.ndim == 1:
        samples = samples[None, :]
    d = np.linalg.norm(samples[:, None, :] - modes[None, :, :], axis=-1).min(axis=1)
    return float(np.mean(d > radius))


class NoiseDistance(NamedTuple):
    sample_mean: float
    expected: float
    stderr: float


def noise_distance_check(dim: int, n_pairs: int, rng: np.random.Generator) -> NoiseDistance:
    """Monte Carlo mean of ``||n1 - n2||^2`` for standard normal pairs next to ``2 * dim``."""
    if dim < 1 or n_pairs < 1:
        raise ContractError("dim and n_pairs must be >= 1")
    total = np.empty(n_pairs)
    chunk = max(1, 2_000_000 // dim)
    for i in range(0, n_pairs, chunk):
        n = min(chunk, n_pairs - i)
        n1 = rng.standard_normal((n, dim))
        n2 = rng.standard_normal((n, dim))
        total[i:i + n] = np.sum((n1 - n2) ** 2, axis=1)
    se = float(total.std(ddof=1) / math.sqrt(n_pairs)) if n_pairs > 1 else float("inf")
    return NoiseDistance(float(total.mean()), float(2 * dim), se)


def perturb_noise(eps, eps_p, w: float) -> np.ndarray:
    """Variance-preserving mix ``(eps + w * eps_p) / sqrt(1 + w^2)``."""
    if w < 0:
        raise ContractError("perturbation weight must be non-negative")
    eps, eps_p = _pair(eps, eps_p)
    if w == 0:
        return eps.copy()
    return (eps + w * eps_p) / math.sqrt(1.0 + w * w)


def continuity_probe(
    net,
    sched: NoiseSchedule,
    strategy: str,
    t_inject: int,
    weights,
    n_seeds: int,
    n_steps: int | None = None,
    seed: int = 0,
) -> dict[float, float]:
    """Mean final displacement caused by perturbing the re-noising noise at one step.

    ``t_inject`` indexes the sampler's step list (0 is the noisiest step).
    Each seed draws its own start noise and perturbation; all weights share them.
    """
    weights = list(weights)
    if not weights:
        raise ContractError("weights must be non-empty")
    n_steps = sched.T if n_steps is None else n_steps
    if not 0 <= t_inject < n_steps:
        raise ContractError(f"t_inject {t_inject} outside 0..{n_steps - 1}")
    rng = np.random.default_rng(seed)
    x_T = rng.standard_normal((n_seeds, net.data_dim))
    eps_p = rng.standard_normal((n_seeds, net.data_dim))
    base = sample(net, sched, strategy, n_steps, x_T).final
    table = {}
    for w in weights:
        def perturb(i, eps_hat, w=w):
            return perturb_noise(eps_hat, eps_p, w) if i == t_inject else eps_hat

        final = sample(net, sched, strategy, n_steps, x_T, perturb=perturb).final
        table[float(w)] = float(np.mean(np.linalg.norm(final - base, axis=1)))
    return table


def _mean_pairwise_distance(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    chunk = max(1, 4_000_000 // (b.shape[0] * b.shape[1]))
    for i in range(0, a.shape[0], chunk):
        diff = a[i:i + chunk, None, :] - b[None, :, :]
        total += float(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).sum())
    return total / (a.shape[0] * b.shape[0])


def fidelity_proxy(samples, reference) -> float:
    """Energy distance ``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` between two point sets.

    All pairs (diagonal included) enter each mean, so the value is
    non-negative and exactly zero for identical sets.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    y = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if x.size == 0 or y.size == 0:
        raise ContractError("both sets must be non-empty")
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"dimension mismatch {x.shape[1]} vs {y.shape[1]}")
    xy = _mean_pairwise_distance(x, y)
    xx = _mean_pairwise_distance(x, x)
    yy = _mean_pairwise_distance(y, y)
    return max(2.0 * xy - xx - yy, 0.0)
