"""Conditional MLP denoiser ``f(x_t, cond, t) -> noise or velocity``.

Three ways of using the condition:

* ``unconditional`` ignores it and refuses non-zero input,
* ``concat`` stacks ``[x_t, cond, time features]`` before the first layer,
* ``control_branch`` runs a trainable copy of the hidden stack on
  ``[cond, time features]`` and adds each of its hidden states into the
  trunk's.  There is no zero-initialised projection between the two.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .numerics import Tape, Var

ARCHS = ("unconditional", "concat", "control_branch")


def time_embedding(t_norm, dim: int = 16, base: float = 1.0, ratio: float = 1000.0) -> np.ndarray:
    """Sinusoidal features ``[sin(f0 t), cos(f0 t), sin(f1 t), ...]``.

    Frequencies are geometric from ``base`` to ``base * ratio``.  A scalar
    ``t_norm`` gives shape ``(dim,)``; an array of ``B`` times gives ``(B, dim)``.
    """
    if dim <= 0 or dim % 2:
        raise ConfigError(f"embedding dim must be positive and even, got {dim}")
    # duplicated frequencies plus a quarter-turn phase give the interleaved sin/cos layout
    freqs, phase = _frequencies(dim // 2, base, ratio)
    t = np.asarray(t_norm, dtype=np.float64)
    if t.ndim == 0:
        return np.sin(t * freqs + phase)
    return np.sin(t[:, None] * freqs + phase)


@lru_cache(maxsize=None)
def _frequencies(half: int, base: float, ratio: float):
    if half == 1:
        f = np.array([base])
    else:
        f = base * ratio ** (np.arange(half) / (half - 1))
    freqs = np.repeat(f, 2)
    phase = np.tile([0.0, np.pi / 2], half)
    freqs.setflags(write=False)
    phase.setflags(write=False)
    return freqs, phase


@dataclass
class ConditionalDenoiser:
    arch: str
    data_dim: int
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64, 64])
    time_embed_dim: int = 16
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.time_embed_dim % 2:
            raise ConfigError("time_embed_dim must be even")

    @property
    def conditional(self) -> bool:
        return self.arch != "unconditional"

    @property
    def input_dim(self) -> int:
        if self.arch == "concat":
            return 2 * self.data_dim + self.time_embed_dim
        return self.data_dim + self.time_embed_dim

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        widths = [self.input_dim, *self.hidden_dims]
        shapes = {}
        for i in range(len(self.hidden_dims)):
            shapes[f"w{i}"] = (widths[i], widths[i + 1])
            shapes[f"b{i}"] = (widths[i + 1],)
        n = len(self.hidden_dims)
        shapes[f"w{n}"] = (widths[-1], self.data_dim)
        shapes[f"b{n}"] = (self.data_dim,)
        if self.arch == "control_branch":
            for i in range(len(self.hidden_dims)):
                shapes[f"cw{i}"] = shapes[f"w{i}"]
                shapes[f"cb{i}"] = shapes[f"b{i}"]
        return shapes

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


def init_denoiser(
    arch: str,
    data_dim: int,
    rng: np.random.Generator,
    hidden_dims=(64, 64, 64),
    time_embed_dim: int = 16,
    zero_output: bool = True,
) -> ConditionalDenoiser:
    """He-uniform hidden layers, zero biases, and (by default) a zero output layer."""
    net = ConditionalDenoiser(arch, data_dim, list(hidden_dims), time_embed_dim)
    n = len(net.hidden_dims)
    params = {}
    for name, shape in net.param_shapes().items():
        if name.startswith(("b", "cb")) or (zero_output and name == f"w{n}"):
            params[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / shape[0])
            params[name] = rng.uniform(-limit, limit, size=shape)
    net.params = params
    return net


def _silu(h):
    if isinstance(h, Var):
        return h.silu()
    return h * (1.0 / (1.0 + np.exp(-h)))  # same rounding as Var.silu


def _mlp(params, n_hidden: int, trunk_in, branch_in=None):
    # params may hold ndarrays or tape Vars; the same code serves both paths
    h = trunk_in
    g = branch_in
    for i in range(n_hidden):
        h = _silu(h @ params[f"w{i}"] + params[f"b{i}"])
        if g is not None:
            g = _silu(g @ params[f"cw{i}"] + params[f"cb{i}"])
            h = h + g
    return h @ params[f"w{n_hidden}"] + params[f"b{n_hidden}"]


def _inputs(net: ConditionalDenoiser, x_t, cond, t_norm):
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != net.data_dim:
        raise DimensionError(f"expected data of width {net.data_dim}, got shape {x.shape}")
    if cond is None:
        c2 = np.zeros_like(x2)
    else:
        c2 = np.asarray(cond, dtype=np.float64)
        c2 = np.broadcast_to(c2[None, :] if c2.ndim == 1 else c2, x2.shape)
    t = np.asarray(t_norm, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ContractError("t_norm must lie in [0, 1]")
    temb = time_embedding(np.broadcast_to(t, (x2.shape[0],)), net.time_embed_dim)
    if net.arch == "unconditional":
        if np.any(c2 != 0):
            raise ContractError("unconditional denoiser received a non-zero condition")
        return single, np.concatenate([x2, temb], axis=1), None
    if net.arch == "concat":
        return single, np.concatenate([x2, c2, temb], axis=1), None
    return single, np.concatenate([x2, temb], axis=1), np.concatenate([c2, temb], axis=1)


def forward(net: ConditionalDenoiser, x_t, cond=None, t_norm=0.0) -> np.ndarray:
    """Network output for one point ``(data_dim,)`` or a batch ``(B, data_dim)``.

    ``cond=None`` is the zero condition.  ``t_norm`` is a scalar or one value per row.
    """
    single, trunk_in, branch_in = _inputs(net, x_t, cond, t_norm)
    out = _mlp(net.params, len(net.hidden_dims), trunk_in, branch_in)
    return out[0] if single else out


def forward_on_tape(net: ConditionalDenoiser, tape: Tape, x_t, cond, t_norm) -> Var:
    """Batched forward pass with parameters registered as tape leaves."""
    _, trunk_in, branch_in = _inputs(net, x_t, cond, t_norm)
    params = {k: tape.param(k, v) for k, v in net.params.items()}
    return _mlp(params, len(net.hidden_dims), trunk_in, branch_in)
