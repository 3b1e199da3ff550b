"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything above this module expresses math exclusively through these
primitives.  The design is define-by-run: while a ``Tape`` is active, every
primitive that touches a gradient-carrying tensor appends one node to the
tape, and ``Tape.backward`` replays the nodes in exact reverse execution
order.  Gradients accumulate additively into ``Tensor.grad``; repeated
backward passes therefore double leaf gradients, and ``zero_grads`` (in
``optim``) resets them.

Broadcasting is deliberately restricted to adding a bias vector over a
batch dimension; every other binary op requires equal shapes.  All data is
contiguous row-major float64, and reductions use numpy's fixed left-to-right
order, so forward results are bitwise reproducible for identical inputs.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionError, DomainMathError

__all__ = [
    "Tensor",
    "Tape",
    "add",
    "affine",
    "clamped_log",
    "concat_cols",
    "concat_rows",
    "gather_rows",
    "log",
    "matmul",
    "mean",
    "mean_squared_error",
    "mul",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "slice_cols",
    "softmax",
    "square",
    "sub",
    "tanh",
    "total",
]

_active_tape: Optional["Tape"] = None


class Tensor:
    """A dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "frozen", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.frozen = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # Thin operator sugar; the named functions remain the primary API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out: Tensor, parents: Sequence[Tensor], backward_fn: Callable):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class _MultiNode:
    __slots__ = ("outs", "parents", "backward_fn")

    def __init__(self, outs: Sequence[Tensor], parents: Sequence[Tensor], backward_fn: Callable):
        self.outs = outs
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed primitives, replayable in reverse."""

    __slots__ = ("_nodes", "_produced", "_prev")

    def __init__(self):
        self._nodes: list[_Node] = []
        self._produced: set[int] = set()
        self._prev: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        global _active_tape
        self._prev = _active_tape
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._prev
        self._prev = None
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, parents: Sequence[Tensor], backward_fn: Callable) -> None:
        self._nodes.append(_Node(out, parents, backward_fn))
        self._produced.add(id(out))

    def record_multi(self, outs: Sequence[Tensor], parents: Sequence[Tensor],
                     backward_fn: Callable) -> None:
        self._nodes.append(_MultiNode(outs, parents, backward_fn))
        for out in outs:
            self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into every requires_grad ancestor.

        Scratch gradients for on-tape intermediates live in a local map and
        are handed over to ``.grad`` once a node is popped, so calling
        backward twice doubles leaf gradients instead of compounding through
        stale intermediate buffers.
        """
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if id(loss) not in self._produced:
            raise DimensionError("loss tensor was not produced on this tape")
        scratch: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = self._produced

        def push(parents, parent_grads):
            for parent, pg in zip(parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in produced:
                    # intermediate: route through scratch only; .grad is
                    # populated when its own node is popped.  Values stored
                    # here are never mutated in place (accumulation allocates),
                    # so holding views or shared buffers is safe.
                    held = scratch.get(pid)
                    scratch[pid] = pg if held is None else held + pg
                else:
                    parent.accumulate_grad(pg)

        for node in reversed(self._nodes):
            if type(node) is _MultiNode:
                gs = tuple(scratch.pop(id(o), None) for o in node.outs)
                if all(g is None for g in gs):
                    continue
                push(node.parents, node.backward_fn(gs))
                for out, g in zip(node.outs, gs):
                    if g is not None:
                        out.grad = g if out.grad is None else out.grad + g
            else:
                g = scratch.pop(id(node.out), None)
                if g is None:
                    continue
                push(node.parents, node.backward_fn(g))
                out = node.out
                out.grad = g if out.grad is None else out.grad + g


def _result(out_data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap a forward result, recording a tape node when gradients can flow."""
    tape = _active_tape
    if tape is None or not any(p.requires_grad for p in parents):
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True)
    tape.record(out, tuple(parents), backward_fn)
    return out


def apply_op(out_data, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Escape hatch for custom primitives (used by tests and extensions)."""
    return _result(np.asarray(out_data, dtype=np.float64), parents, backward_fn)


def apply_multi_op(out_datas: Sequence[np.ndarray], parents: Sequence[Tensor],
                   backward_fn: Callable) -> tuple:
    """Record one fused primitive with several outputs.

    backward_fn receives a tuple of output gradients (None for outputs the
    loss does not depend on) and returns per-parent gradients."""
    outs = tuple(Tensor(d) for d in out_datas)
    tape = _active_tape
    if tape is None or not any(p.requires_grad for p in parents):
        return outs
    for out in outs:
        out.requires_grad = True
    tape.record_multi(outs, tuple(parents), backward_fn)
    return outs


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# binary ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def backward_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape == b.data.shape:
        def backward_fn(g):
            return g, g

        return _result(a.data + b.data, (a, b), backward_fn)
    # bias vector broadcast over the batch dimension
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        def backward_fn(g):
            return g, g.sum(axis=0)

        return _result(a.data + b.data, (a, b), backward_fn)
    raise DimensionError(f"add shapes incompatible: {a.data.shape} + {b.data.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"sub shapes incompatible: {a.data.shape} - {b.data.shape}")

    def backward_fn(g):
        return g, -g

    return _result(a.data - b.data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mul shapes incompatible: {a.data.shape} * {b.data.shape}")

    def backward_fn(g):
        ga = g * b.data if a.requires_grad else None
        gb = g * a.data if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward_fn)


def scale(a: Tensor, k: float) -> Tensor:
    a = _as_tensor(a)
    k = float(k)

    def backward_fn(g):
        return (g * k,)

    return _result(a.data * k, (a,), backward_fn)


def affine(a: Tensor, k: float, c: float) -> Tensor:
    """k*a + c, elementwise with scalar constants."""
    a = _as_tensor(a)
    k, c = float(k), float(c)

    def backward_fn(g):
        return (g * k,)

    return _result(a.data * k + c, (a,), backward_fn)


# ---------------------------------------------------------------------------
# unary ops


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = expit(a.data)  # overflow-free logistic

    def backward_fn(g):
        return (g * y * (1.0 - y),)

    return _result(y, (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def backward_fn(g):
        return (g * (1.0 - y * y),)

    return _result(y, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def backward_fn(g):
        return (g * mask,)

    return _result(np.where(mask, a.data, 0.0), (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if not np.all(a.data > 0):
        bad = float(a.data.min())
        raise DomainMathError(f"log requires strictly positive inputs, got min {bad}")
    x = a.data

    def backward_fn(g):
        return (g / x,)

    return _result(np.log(x), (a,), backward_fn)


def clamped_log(a: Tensor, eps: float = 1e-7) -> Tensor:
    """log(max(x, eps)): bounded below, zero gradient inside the clamp."""
    a = _as_tensor(a)
    clamped = np.maximum(a.data, eps)
    active = a.data > eps

    def backward_fn(g):
        return (g * active / clamped,)

    return _result(np.log(clamped), (a,), backward_fn)


def square(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data

    def backward_fn(g):
        return (g * 2.0 * x,)

    return _result(x * x, (a,), backward_fn)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis, computed with max-subtraction."""
    a = _as_tensor(a)
    if a.data.size == 0:
        raise DimensionError("softmax of an empty tensor")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _result(y, (a,), backward_fn)


# ---------------------------------------------------------------------------
# reductions and shape ops


def total(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape

    def backward_fn(g):
        return (np.full(shape, float(g.reshape(()))),)

    return _result(np.asarray(a.data.sum()), (a,), backward_fn)


def mean(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.data.size == 0:
        raise DimensionError("mean of an empty tensor")
    shape, n = a.data.shape, a.data.size

    def backward_fn(g):
        return (np.full(shape, float(g.reshape(())) / n),)

    return _result(np.asarray(a.data.mean()), (a,), backward_fn)


def mean_squared_error(pred: Tensor, truth: Tensor) -> Tensor:
    pred, truth = _as_tensor(pred), _as_tensor(truth)
    if pred.data.size == 0:
        raise DimensionError("mean_squared_error of empty inputs")
    if pred.data.shape != truth.data.shape:
        raise DimensionError(
            f"mean_squared_error shapes differ: {pred.data.shape} vs {truth.data.shape}"
        )
    return mean(square(sub(pred, truth)))


def concat_cols(*tensors: Tensor) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if any(t.data.ndim != 2 for t in ts):
        raise DimensionError("concat_cols needs 2-d tensors")
    rows = {t.data.shape[0] for t in ts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols row counts differ: {[t.data.shape for t in ts]}")
    widths = [t.data.shape[1] for t in ts]
    bounds = np.cumsum([0] + widths)

    def backward_fn(g):
        return tuple(
            g[:, bounds[i]:bounds[i + 1]] if t.requires_grad else None
            for i, t in enumerate(ts)
        )

    return _result(np.concatenate([t.data for t in ts], axis=1), ts, backward_fn)


def concat_rows(*tensors: Tensor) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if any(t.data.ndim != 2 for t in ts):
        raise DimensionError("concat_rows needs 2-d tensors")
    cols = {t.data.shape[1] for t in ts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows column counts differ: {[t.data.shape for t in ts]}")
    heights = [t.data.shape[0] for t in ts]
    bounds = np.cumsum([0] + heights)

    def backward_fn(g):
        return tuple(
            g[bounds[i]:bounds[i + 1], :] if t.requires_grad else None
            for i, t in enumerate(ts)
        )

    return _result(np.concatenate([t.data for t in ts], axis=0), ts, backward_fn)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2 or not (0 <= lo < hi <= a.data.shape[1]):
        raise DimensionError(f"slice_cols [{lo}:{hi}] invalid for shape {a.data.shape}")
    shape = a.data.shape

    def backward_fn(g):
        full = np.zeros(shape)
        full[:, lo:hi] = g
        return (full,)

    return _result(a.data[:, lo:hi], (a,), backward_fn)


def gather_rows(table: Tensor, indices) -> Tensor:
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"gather_rows needs 1-d indices, got shape {idx.shape}")
    shape = table.data.shape

    def backward_fn(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx, g)
        return (gt,)

    return _result(table.data[idx], (table,), backward_fn)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape

    def backward_fn(g):
        return (g.reshape(old),)

    return _result(a.data.reshape(shape), (a,), backward_fn)
