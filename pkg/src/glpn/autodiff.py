"""Tape-based reverse-mode differentiation over dense float64 matrices.

Every value is a 2-D array.  A :class:`Tape` records nodes in creation order,
which is a valid topological order, and :func:`backward` walks it in reverse
accumulating vector-Jacobian products.  Only exact-shape operations and the
scalar cases (Python float, or a ``1 x 1`` node) are supported.

>>> tape = Tape()
>>> x = tape.param([[1.0], [2.0]])
>>> grads = backward(masked_sse(x, tape.const([[0.0], [0.0]]), tape.const([[1.0], [1.0]])))
>>> grads[x.name].ravel().tolist()
[2.0, 4.0]
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .errors import ContractError, DimensionError


class Var:
    __slots__ = ("value", "grad", "parents", "vjp", "tape", "trainable", "needs_grad", "op", "name")

    def __init__(self, tape, value, parents=(), vjp=None, trainable=False, op="leaf", name=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.trainable = trainable
        self.needs_grad = trainable or any(p.needs_grad for p in parents)
        self.op = op
        self.name = name
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Var):
            if other.shape == (1, 1) and self.shape != (1, 1):
                return scale_by(self, other)
            if self.shape == (1, 1) and other.shape != (1, 1):
                return scale_by(other, self)
            return hadamard(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.shape})"


class Tape:
    """Records the expression graph for one forward pass."""

    def __init__(self):
        self.nodes: list[Var] = []

    def param(self, value, name=None) -> Var:
        """Trainable leaf.  The array is wrapped, not copied."""
        v = np.asarray(value, dtype=np.float64)
        if v.ndim != 2:
            v = np.atleast_2d(v)
        return Var(self, v, trainable=True, name=name if name is not None else f"p{len(self.nodes)}")

    def const(self, value) -> Var:
        v = np.asarray(value, dtype=np.float64)
        if v.ndim != 2:
            v = np.atleast_2d(v)
        return Var(self, v, op="const")

    def params(self) -> list[Var]:
        return [n for n in self.nodes if n.trainable]


def _lift(x, like: Var) -> Var:
    return x if isinstance(x, Var) else like.tape.const(x)


def _node(parents, value, vjp, op) -> Var:
    return Var(parents[0].tape, value, parents=tuple(parents), vjp=vjp, op=op)


def _same_shape(a: Var, b: Var, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Var, b: Var) -> Var:
    b = _lift(b, a)
    a = _lift(a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _node((a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g), "matmul")


def add(a: Var, b: Var) -> Var:
    b = _lift(b, a)
    _same_shape(a, b, "add")
    return _node((a, b), a.value + b.value, lambda g: (g, g), "add")


def sub(a: Var, b: Var) -> Var:
    b = _lift(b, a)
    _same_shape(a, b, "sub")
    return _node((a, b), a.value - b.value, lambda g: (g, -g), "sub")


def scale(a: Var, c: float) -> Var:
    return _node((a,), c * a.value, lambda g: (c * g,), "scale")


def scale_by(a: Var, s: Var) -> Var:
    """Multiply a matrix by a ``1 x 1`` node."""
    if s.shape != (1, 1):
        raise DimensionError("scale_by needs a 1x1 scalar node")
    av, sv = a.value, float(s.value[0, 0])
    return _node((a, s), sv * av, lambda g: (sv * g, np.array([[np.sum(g * av)]])), "scale_by")


def hadamard(a: Var, b: Var) -> Var:
    b = _lift(b, a)
    _same_shape(a, b, "hadamard")
    av, bv = a.value, b.value
    return _node((a, b), av * bv, lambda g: (g * bv, g * av), "hadamard")


def transpose(a: Var) -> Var:
    return _node((a,), np.ascontiguousarray(a.value.T), lambda g: (g.T,), "transpose")


def _softmax_rows(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(a: Var) -> Var:
    y = _softmax_rows(a.value)
    return _node((a,), y, lambda g: (y * (g - np.sum(g * y, axis=1, keepdims=True)),), "row_softmax")


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    return _node((a,), y, lambda g: (g * (1.0 - y * y),), "tanh")


def relu(a: Var) -> Var:
    on = a.value > 0
    return _node((a,), np.where(on, a.value, 0.0), lambda g: (g * on,), "relu")


def sigmoid(a: Var) -> Var:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node((a,), y, lambda g: (g * y * (1.0 - y),), "sigmoid")


def masked_sse(x_hat: Var, x, mask) -> Var:
    """``sum(mask * (x_hat - x)^2)`` as a ``1 x 1`` node."""
    x = _lift(x, x_hat)
    mask = _lift(mask, x_hat)
    _same_shape(x_hat, x, "masked_sse")
    _same_shape(x_hat, mask, "masked_sse")
    m = mask.value
    r = m * (x_hat.value - x.value)
    return _node(
        (x_hat, x, mask),
        np.array([[np.sum(r * (x_hat.value - x.value))]]),
        lambda g: (2.0 * g[0, 0] * r, -2.0 * g[0, 0] * r, g[0, 0] * (x_hat.value - x.value) ** 2),
        "masked_sse",
    )


def activation(name: str) -> Callable[[Var], Var]:
    table = {"identity": lambda v: v, "relu": relu, "tanh": tanh, "sigmoid": sigmoid}
    try:
        return table[name]
    except KeyError:
        raise ContractError(f"unknown activation {name!r}") from None


def backward(loss: Var) -> Dict[str, np.ndarray]:
    """Populate ``.grad`` on every node reachable from ``loss``.

    Gradients are reset first, so repeated calls give identical results.
    Returns ``{param name: gradient}`` for the trainable leaves.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"loss must be 1x1, got {loss.shape}")
    nodes = loss.tape.nodes
    for node in nodes:
        node.grad = None
    loss.grad = np.ones((1, 1))
    for node in reversed(nodes):
        if node.grad is None or node.vjp is None or not node.needs_grad:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if not parent.needs_grad:
                continue
            parent.grad = g.copy() if parent.grad is None else parent.grad + g
    out = {}
    for node in nodes:
        if node.trainable:
            out[node.name] = node.grad if node.grad is not None else np.zeros_like(node.value)
            node.grad = out[node.name]
    return out


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              frozen: Optional[set] = None) -> Dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns a new parameter dict.

    ``state`` is advanced in place.  Parameters without a gradient entry (or
    listed in ``frozen``) are passed through unchanged.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for key, p in params.items():
        g = grads.get(key)
        if g is None or (frozen and key in frozen):
            out[key] = p
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {key} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(key)
        v = state.v.get(key)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[key], state.v[key] = m, v
        out[key] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out
