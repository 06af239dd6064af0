"""Experiment configuration: one JSON document, hashed in canonical form."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import ConfigError
from ..sampling import STRATEGIES
from ..schedule import NoiseSchedule, make_cosine, make_linear
from ..training import TrainConfig

DATASETS = ("two_gaussians", "gaussian_ring", "moons")
SCHEDULES = ("toy_continuous", "linear", "cosine")
OUT_DIR_ENV = "NONCROSS_OUT_DIR"

DISCRETE_STEPS = [1000, 100, 50, 20, 10, 5]
TOY_STEPS = [2, 5, 10, 100]


@dataclass
class DatasetConfig:
    name: str = "two_gaussians"
    sigma: float = 0.2
    separation: float = 2.0  # two_gaussians: modes at (+-separation, 0)
    k: int = 6  # gaussian_ring: number of modes
    ring_radius: float = 4.0
    source_shift: list[float] = field(default_factory=lambda: [0.0, 0.0])
    ood_radius: float | None = None  # default 3 * sigma

    def __post_init__(self):
        if self.name not in DATASETS:
            raise ConfigError(f"unknown dataset {self.name!r}; expected one of {DATASETS}")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.name == "gaussian_ring" and self.k < 1:
            raise ConfigError("gaussian_ring needs k >= 1")

    @property
    def radius(self) -> float:
        return 3.0 * self.sigma if self.ood_radius is None else self.ood_radius


@dataclass
class ScheduleConfig:
    kind: str = "toy_continuous"
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULES}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        self.build()  # surfaces bad beta bounds at load time

    @property
    def discrete(self) -> bool:
        return self.kind != "toy_continuous"

    def build(self) -> NoiseSchedule | None:
        if self.kind == "linear":
            return make_linear(self.T, self.beta_start, self.beta_end)
        if self.kind == "cosine":
            return make_cosine(self.T)
        return None


@dataclass
class SampleConfig:
    strategies: list[str] = field(default_factory=lambda: ["prev_step_pred"])
    step_counts: list[int] = field(default_factory=lambda: list(TOY_STEPS))
    n_samples: int = 1000
    n_trajectories: int = 64  # chains whose full paths are exported

    def __post_init__(self):
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}")
        if not self.step_counts or min(self.step_counts) < 1:
            raise ConfigError("step_counts must be non-empty and >= 1")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    data_dim: int = 2
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    arch: str = "concat"
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64, 64])
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.data_dim != 2:
            raise ConfigError("toy datasets are two-dimensional")
        if self.arch not in ("concat", "control_branch"):
            raise ConfigError(f"non-cross arch must be concat or control_branch, got {self.arch!r}")
        if self.schedule.discrete:
            if max(self.sample.step_counts) > self.schedule.T:
                raise ConfigError("every step count must be <= T")
            if self.train.mode != "ddpm_eps":
                raise ConfigError("discrete schedules train in ddpm_eps mode")
        elif self.train.mode != "toy_velocity":
            raise ConfigError("toy_continuous schedule trains in toy_velocity mode")

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        sub = {
            "dataset": DatasetConfig,
            "schedule": ScheduleConfig,
            "train": TrainConfig,
            "sample": SampleConfig,
        }
        for key, typ in sub.items():
            if key in d:
                d[key] = typ(**d[key])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def canonical(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def resolved_out_dir(self) -> Path:
        return Path(os.environ.get(OUT_DIR_ENV, self.out_dir))


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_json(Path(path).read_text())


def toy_config(**overrides) -> ExperimentConfig:
    """The default toy transport experiment."""
    return ExperimentConfig(**overrides)


def discrete_config(T: int = 100, **overrides) -> ExperimentConfig:
    """A DDPM-mode experiment on the toy data with a linear schedule."""
    # stretch the 1000-step betas so short chains still end near pure noise
    overrides.setdefault("schedule", ScheduleConfig("linear", T, 1e-4, min(0.02 * 1000 / T, 0.5)))
    overrides.setdefault("train", TrainConfig(mode="ddpm_eps"))
    overrides.setdefault(
        "sample", SampleConfig(step_counts=[n for n in DISCRETE_STEPS if n <= T] or [T])
    )
    return ExperimentConfig(**overrides)
