"""Reverse-mode autodiff on numpy arrays, recorded on a per-pass tape.

Nodes hold 64-bit arrays (any shape, 0-d scalars included). Ops append nodes
in creation order, which is already a topological order, so the backward pass
is a single reverse sweep that visits each node once. Gradients accumulate
additively, so several loss terms seeded on the same tape combine into one
weighted gradient sum. Nodes that cannot reach a parameter skip closure
creation entirely, which keeps constant-only subgraphs (frozen inference,
observed-frame geometry) cheap.

A tape is single-use for backward; build a fresh one per forward/backward
pass.
"""
from __future__ import annotations

import numpy as np


class Node:
    __slots__ = ("value", "grad", "requires_grad", "_backward", "tape")

    def __init__(self, tape, value, requires_grad):
        self.tape = tape
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    # operators; raw numbers/arrays are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(self.tape, other))

    def __radd__(self, other):
        return add(_wrap(self.tape, other), self)

    def __sub__(self, other):
        return sub(self, _wrap(self.tape, other))

    def __rsub__(self, other):
        return sub(_wrap(self.tape, other), self)

    def __mul__(self, other):
        return mul(self, _wrap(self.tape, other))

    def __rmul__(self, other):
        return mul(_wrap(self.tape, other), self)

    def __truediv__(self, other):
        return div(self, _wrap(self.tape, other))

    def __rtruediv__(self, other):
        return div(_wrap(self.tape, other), self)

    def __neg__(self):
        return self * -1.0

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of differentiable ops for one forward/backward pass.

    With ``train=False`` parameter leaves are treated as constants and the
    whole pass records nothing, which is the cheap inference mode.
    """

    def __init__(self, train: bool = True):
        self.train = train
        self.nodes: list[Node] = []
        self._params: dict[str, tuple] = {}  # name -> (ParamMatrix, Node)

    def const(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64), False)

    def leaf(self, value) -> Node:
        """A differentiable input that is not a stored parameter."""
        node = Node(self, np.asarray(value, dtype=np.float64), self.train)
        if node.requires_grad:
            self.nodes.append(node)
        return node

    def param(self, pm) -> Node:
        """Leaf node viewing a ParamMatrix; cached so reuse shares one node."""
        cached = self._params.get(pm.name)
        if cached is not None:
            return cached[1]
        node = Node(self, pm.values, self.train)
        if node.requires_grad:
            self.nodes.append(node)
        self._params[pm.name] = (pm, node)
        return node

    def _make(self, value, parents, backward) -> Node:
        requires = any(p.requires_grad for p in parents)
        if type(value) is not np.ndarray:
            value = np.asarray(value, dtype=np.float64)
        node = Node(self, value, requires)
        if requires:
            node._backward = backward
            self.nodes.append(node)
        return node

    def backward(self, loss: Node, seed: float = 1.0) -> None:
        """Propagate d(seed * loss) into every reachable leaf and parameter.

        ``loss`` must be scalar. Parameter gradients are ADDED into their
        ParamMatrix.grad buffers, so calling this once per sample accumulates
        a batch gradient.
        """
        if loss.value.ndim != 0:
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        if not loss.requires_grad:
            return
        _accum(loss, np.asarray(seed, dtype=np.float64))
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        for pm, node in self._params.values():
            if node.grad is not None:
                pm.grad += node.grad


def _wrap(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.const(x)


def _accum(node: Node, g) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64)  # own the buffer
    else:
        node.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules)

def add(a: Node, b: Node) -> Node:
    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))
    return a.tape._make(a.value + b.value, (a, b), backward)


def sub(a: Node, b: Node) -> Node:
    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))
    return a.tape._make(a.value - b.value, (a, b), backward)


def mul(a: Node, b: Node) -> Node:
    def backward(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))
    return a.tape._make(a.value * b.value, (a, b), backward)


def div(a: Node, b: Node) -> Node:
    def backward(g):
        _accum(a, _unbroadcast(g / b.value, a.value.shape))
        _accum(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))
    return a.tape._make(a.value / b.value, (a, b), backward)


def maximum(a: Node, b: Node) -> Node:
    # ties route the gradient to the first operand
    mask = a.value >= b.value
    def backward(g):
        _accum(a, _unbroadcast(g * mask, a.value.shape))
        _accum(b, _unbroadcast(g * ~mask, b.value.shape))
    return a.tape._make(np.maximum(a.value, b.value), (a, b), backward)


def minimum(a: Node, b: Node) -> Node:
    mask = a.value <= b.value
    def backward(g):
        _accum(a, _unbroadcast(g * mask, a.value.shape))
        _accum(b, _unbroadcast(g * ~mask, b.value.shape))
    return a.tape._make(np.minimum(a.value, b.value), (a, b), backward)


# ---------------------------------------------------------------------------
# nonlinearities

def relu(x: Node) -> Node:
    out = np.maximum(x.value, 0.0)
    def backward(g):
        _accum(x, g * (x.value > 0.0))
    return x.tape._make(out, (x,), backward)


def sigmoid(x: Node) -> Node:
    out = 1.0 / (1.0 + np.exp(-x.value))
    def backward(g):
        _accum(x, g * out * (1.0 - out))
    return x.tape._make(out, (x,), backward)


def tanh(x: Node) -> Node:
    out = np.tanh(x.value)
    def backward(g):
        _accum(x, g * (1.0 - out * out))
    return x.tape._make(out, (x,), backward)


def exp(x: Node) -> Node:
    out = np.exp(x.value)
    def backward(g):
        _accum(x, g * out)
    return x.tape._make(out, (x,), backward)


def log(x: Node) -> Node:
    def backward(g):
        _accum(x, g / x.value)
    return x.tape._make(np.log(x.value), (x,), backward)


def softmax(x: Node) -> Node:
    """Stable softmax over a 1-D vector; output sums to one."""
    shifted = x.value - x.value.max()
    e = np.exp(shifted)
    out = e / e.sum()
    def backward(g):
        _accum(x, out * (g - np.dot(g, out)))
    return x.tape._make(out, (x,), backward)


def clip(x: Node, lo: float, hi: float) -> Node:
    """Clamp values; gradient passes only through the interior."""
    mask = (x.value > lo) & (x.value < hi)
    def backward(g):
        _accum(x, g * mask)
    return x.tape._make(np.clip(x.value, lo, hi), (x,), backward)


def smooth_l1(x: Node) -> Node:
    """Element-wise Huber penalty, quadratic inside the unit interval."""
    a = np.abs(x.value)
    out = np.where(a < 1.0, 0.5 * x.value * x.value, a - 0.5)
    local = np.where(a < 1.0, x.value, np.sign(x.value))
    def backward(g):
        _accum(x, g * local)
    return x.tape._make(out, (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a: Node, b: Node) -> Node:
    """2-D @ 1-D or 2-D @ 2-D product."""
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    if bv.ndim == 1:
        def backward(g):
            _accum(a, np.outer(g, bv))
            _accum(b, av.T @ g)
    else:
        def backward(g):
            _accum(a, g @ bv.T)
            _accum(b, av.T @ g)
    return a.tape._make(av @ bv, (a, b), backward)


def dot(a: Node, b: Node) -> Node:
    def backward(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)
    return a.tape._make(np.dot(a.value, b.value), (a, b), backward)


def vsum(x: Node, axis=None) -> Node:
    def backward(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.value.shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.value.shape))
    return x.tape._make(x.value.sum(axis=axis), (x,), backward)


def concat(parts) -> Node:
    """Join 1-D nodes end to end."""
    sizes = [p.value.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)
    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])
    return parts[0].tape._make(np.concatenate([p.value for p in parts]),
                               tuple(parts), backward)


def vstack(parts) -> Node:
    """Stack 2-D nodes on the row axis."""
    sizes = [p.value.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)
    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])
    return parts[0].tape._make(np.concatenate([p.value for p in parts], axis=0),
                               tuple(parts), backward)


def stack_rows(parts) -> Node:
    """Stack 1-D nodes of equal length into a (len(parts), n) matrix."""
    def backward(g):
        for i, p in enumerate(parts):
            _accum(p, g[i])
    return parts[0].tape._make(np.stack([p.value for p in parts]),
                               tuple(parts), backward)


def stack_scalars(parts) -> Node:
    def backward(g):
        for i, p in enumerate(parts):
            _accum(p, g[i])
    return parts[0].tape._make(np.array([float(p.value) for p in parts]),
                               tuple(parts), backward)


def tile_cols(x: Node, n: int) -> Node:
    """Repeat a 1-D vector as n columns, yielding (len(x), n)."""
    def backward(g):
        _accum(x, g.sum(axis=1))
    return x.tape._make(np.repeat(x.value[:, None], n, axis=1), (x,), backward)


def vec_slice(x: Node, lo: int, hi: int) -> Node:
    def backward(g):
        full = np.zeros_like(x.value)
        full[lo:hi] = g
        _accum(x, full)
    return x.tape._make(x.value[lo:hi].copy(), (x,), backward)


def pick(x: Node, i: int) -> Node:
    """Select one element of a 1-D vector as a 0-d scalar node."""
    def backward(g):
        full = np.zeros_like(x.value)
        full[i] = g
        _accum(x, full)
    return x.tape._make(np.asarray(x.value[i]), (x,), backward)


def flatten(x: Node) -> Node:
    def backward(g):
        _accum(x, g.reshape(x.value.shape))
    return x.tape._make(x.value.reshape(-1), (x,), backward)


def lstm_core(z: Node, c_prev: Node) -> tuple[Node, Node]:
    """Fused LSTM cell body: gates from preactivations, then the state update.

    ``z`` holds the stacked (4H,) gate preactivations ordered
    [input, forget, candidate, output]. Returns (hidden, cell). Fusing the
    gate nonlinearities and products into one taped op keeps per-step node
    counts low, which dominates training cost at desk scale.
    """
    hdim = c_prev.value.shape[0]
    if z.value.shape != (4 * hdim,):
        raise ValueError(f"lstm_core expects ({4 * hdim},) preactivations, got {z.value.shape}")
    zv = z.value
    i = 1.0 / (1.0 + np.exp(-zv[0:hdim]))
    f = 1.0 / (1.0 + np.exp(-zv[hdim:2 * hdim]))
    g_ = np.tanh(zv[2 * hdim:3 * hdim])
    o = 1.0 / (1.0 + np.exp(-zv[3 * hdim:4 * hdim]))
    cell = f * c_prev.value + i * g_
    tanh_c = np.tanh(cell)
    hidden = o * tanh_c

    def backward(g):
        gh = g[0:hdim]
        dc = g[hdim:2 * hdim] + gh * o * (1.0 - tanh_c * tanh_c)
        dz = np.empty_like(zv)
        dz[0:hdim] = dc * g_ * i * (1.0 - i)
        dz[hdim:2 * hdim] = dc * c_prev.value * f * (1.0 - f)
        dz[2 * hdim:3 * hdim] = dc * i * (1.0 - g_ * g_)
        dz[3 * hdim:4 * hdim] = gh * tanh_c * o * (1.0 - o)
        _accum(z, dz)
        _accum(c_prev, dc * f)
    hc = z.tape._make(np.concatenate([hidden, cell]), (z, c_prev), backward)
    return vec_slice(hc, 0, hdim), vec_slice(hc, hdim, 2 * hdim)
