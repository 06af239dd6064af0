"""Small reverse-mode autodiff and Adam, enough to train MLPs on a CPU.

Tensors are plain float64 ``numpy.ndarray`` values.  Differentiable values
are wrapped in :class:`Var`, which records every primitive on a :class:`Tape`.
The tape is rebuilt for every training step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DimensionError

DTYPE = np.float64


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains NaN or Inf")
    return x


def matmul(a, b):
    """Matrix product of two 2-D tensors; records on the tape if either is a Var."""
    if isinstance(a, Var):
        return a @ b
    if isinstance(b, Var):
        return b.tape.const(a) @ b
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "matmul result")


@dataclass
class _Node:
    inputs: tuple[int, ...]
    out: int
    vjp: Callable[[np.ndarray], tuple]
    op: str


class Var:
    """A tensor tracked by a tape."""

    __slots__ = ("tape", "id", "value", "needs_grad")
    __array_ufunc__ = None  # make ndarray @ Var dispatch to Var.__rmatmul__

    def __init__(self, tape: "Tape", id_: int, value: np.ndarray, needs_grad: bool):
        self.tape = tape
        self.id = id_
        self.value = value
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.value.shape

    def _other(self, other) -> "Var":
        return other if isinstance(other, Var) else self.tape.const(other)

    def __matmul__(self, other):
        other = self._other(other)
        a, b = self.value, other.value
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
        da, db = self.needs_grad, other.needs_grad
        return self.tape._record(
            "matmul", (self, other), a @ b,
            lambda g: (g @ b.T if da else None, a.T @ g if db else None),
        )

    def __rmatmul__(self, other):
        return self._other(other) @ self

    def __add__(self, other):
        other = self._other(other)
        a, b = self.value, other.value
        return self.tape._record(
            "add", (self, other), a + b,
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = self._other(other)
        a, b = self.value, other.value
        return self.tape._record(
            "sub", (self, other), a - b,
            lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
        )

    def __rsub__(self, other):
        return self._other(other) - self

    def __mul__(self, other):
        other = self._other(other)
        a, b = self.value, other.value
        return self.tape._record(
            "mul", (self, other), a * b,
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape._record("neg", (self,), -self.value, lambda g: (-g,))

    def silu(self):
        x = self.value
        s = 1.0 / (1.0 + np.exp(-x))
        return self.tape._record(
            "silu", (self,), x * s, lambda g: (g * s * (1.0 + x * (1.0 - s)),)
        )

    def sum(self):
        shape = self.value.shape
        return self.tape._record(
            "sum", (self,), np.asarray(self.value.sum()),
            lambda g: (np.broadcast_to(g, shape).copy(),),
        )

    def mean(self):
        n = self.value.size
        shape = self.value.shape
        return self.tape._record(
            "mean", (self,), np.asarray(self.value.mean()),
            lambda g: (np.full(shape, g / n),),
        )

    def square(self):
        x = self.value
        return self.tape._record("square", (self,), x * x, lambda g: (2.0 * g * x,))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    # only row-broadcast of a bias vector and scalar broadcast are needed
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    return g.reshape(-1, *shape).sum(axis=0)


class Tape:
    """Ordered record of primitive ops; inputs always precede consumers.

    Ops whose inputs are all constants are evaluated but not recorded.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.params: dict[str, Var] = {}
        self._n = 0

    def _new(self, value: np.ndarray, needs_grad: bool) -> Var:
        v = Var(self, self._n, value, needs_grad)
        self._n += 1
        return v

    def param(self, name: str, value: np.ndarray) -> Var:
        """A leaf whose gradient :func:`backward` reports under ``name``."""
        v = self._new(as_tensor(value), True)
        self.params[name] = v
        return v

    def const(self, value) -> Var:
        return self._new(as_tensor(value), False)

    def _record(self, op, inputs, value, vjp) -> Var:
        needs = any(v.needs_grad for v in inputs)
        out = self._new(value, needs)
        if needs:
            self.nodes.append(_Node(tuple(v.id for v in inputs), out.id, vjp, op))
        return out


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every named parameter."""
    if loss.tape is not tape:
        raise ContractError("loss was not recorded on this tape")
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.out, None)
        if g is None:
            continue
        for i, gi in zip(node.inputs, node.vjp(g)):
            if gi is None:
                continue
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = gi
    out = {}
    for name, leaf in tape.params.items():
        g = grads.get(leaf.id)
        if g is None:
            g = np.zeros_like(leaf.value)
        if not np.isfinite(g.sum()):
            raise FloatingPointError(f"gradient of {name} contains NaN or Inf")
        out[name] = g
    return out


def mse(pred, target):
    diff = pred - target
    if isinstance(diff, Var):
        return diff.square().mean()
    return float(np.mean(diff * diff))


@dataclass
class AdamState:
    """Moment accumulators keyed like the parameters, plus hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **hyper) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )


def _flat(d: dict[str, np.ndarray], keys) -> np.ndarray:
    return np.concatenate([d[k].ravel() for k in keys])


def _unflat(flat: np.ndarray, like: dict[str, np.ndarray], keys) -> dict[str, np.ndarray]:
    out, i = {}, 0
    for k in keys:
        n = like[k].size
        out[k] = flat[i:i + n].reshape(like[k].shape)
        i += n
    return out


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float | None = None,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update.  Returns new params and a new state.

    ``lr`` overrides ``state.lr`` for this step only (used for decay schedules).
    Inputs are never modified.
    """
    keys = list(params)
    for k in keys:
        p, g, m = params[k], grads[k], state.m[k]
        if g.shape != p.shape or m.shape != p.shape or state.v[k].shape != p.shape:
            raise DimensionError(f"{k}: param {p.shape}, grad {g.shape}, moment {m.shape}")
    lr = state.lr if lr is None else lr
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    g = _flat(grads, keys)
    m = b1 * _flat(state.m, keys) + (1.0 - b1) * g
    v = b2 * _flat(state.v, keys) + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    p = _flat(params, keys) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(
        state.lr, b1, b2, state.eps, step, _unflat(m, params, keys), _unflat(v, params, keys)
    )
    return _unflat(p, params, keys), new_state
