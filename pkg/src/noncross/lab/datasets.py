"""Toy target mixtures (pi_0) and Gaussian sources (pi_1)."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..training import FlowPair
from .config import DatasetConfig


def mode_centers(ds: DatasetConfig) -> np.ndarray:
    if ds.name == "two_gaussians":
        return np.array([[-ds.separation, 0.0], [ds.separation, 0.0]])
    if ds.name == "gaussian_ring":
        ang = 2 * np.pi * np.arange(ds.k) / ds.k
        return ds.ring_radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if ds.name == "moons":
        # dense points along both arcs stand in for mode centres
        s = np.linspace(0, np.pi, 64)
        upper = np.stack([np.cos(s), np.sin(s)], axis=1)
        lower = np.stack([1 - np.cos(s), 0.5 - np.sin(s)], axis=1)
        return np.concatenate([upper, lower]) - [0.5, 0.25]
    raise ConfigError(f"unknown dataset {ds.name!r}")


def sample_target(ds: DatasetConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    if ds.name == "moons":
        s = rng.uniform(0, np.pi, n)
        upper = rng.random(n) < 0.5
        pts = np.where(
            upper[:, None],
            np.stack([np.cos(s), np.sin(s)], axis=1),
            np.stack([1 - np.cos(s), 0.5 - np.sin(s)], axis=1),
        )
        return pts - [0.5, 0.25] + ds.sigma * rng.standard_normal((n, 2))
    centers = mode_centers(ds)
    k = rng.integers(0, len(centers), n)
    return centers[k] + ds.sigma * rng.standard_normal((n, 2))


def sample_source(ds: DatasetConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    return np.asarray(ds.source_shift) + rng.standard_normal((n, 2))


def sample_pairs(ds: DatasetConfig, rng: np.random.Generator, n: int) -> FlowPair:
    """Independent draws from target x source."""
    x0 = sample_target(ds, rng, n)
    return FlowPair(x0, sample_source(ds, rng, n))


def generate_dataset(cfg, n: int | None = None, seed: int | None = None) -> FlowPair:
    """``n`` independent (target, source) pairs as rows of one FlowPair."""
    ds = cfg.dataset if hasattr(cfg, "dataset") else cfg
    n = cfg.sample.n_samples if n is None else n
    seed = cfg.seed if seed is None else seed
    return sample_pairs(ds, np.random.default_rng([seed, 0xDA7A]), n)
