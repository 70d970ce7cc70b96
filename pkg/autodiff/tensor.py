"""
Dense float64 tensors and the define-by-run graph that records them.

Every differentiable op appends one record to the active `Graph`; `backward`
walks the records once, in reverse, accumulating vector-Jacobian products.
Tensor data is read-only: parameters change by assigning a new array, never
by writing into one that a live graph may still reference.
"""
import contextlib
import contextvars
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from dhalab.exceptions import GraphError, ShapeError

DTYPE = np.float64

_active_graph = contextvars.ContextVar("dhalab_active_graph", default=None)
_grad_enabled = contextvars.ContextVar("dhalab_grad_enabled", default=True)


def _frozen(array):
    array = np.array(array, dtype=DTYPE)
    array.flags.writeable = False
    return array


class Tensor:
    """A dense n-dimensional array that may take part in a computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_record", "_graph")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        self.data = _frozen(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._record = None
        self._graph = None

    @classmethod
    def _wrap(cls, array):
        out = cls.__new__(cls)
        array = np.asarray(array, dtype=DTYPE)
        if array.flags.writeable:
            array.flags.writeable = False
        out.data = array
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._record = None
        out._graph = None
        return out

    # shape helpers

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._record is None

    def item(self):
        if self.data.size != 1:
            raise ShapeError("item", self.shape, detail="tensor is not a scalar")
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor._wrap(self.data)

    def assign(self, array):
        """Replace the data with a copy of `array`; the shape must not change."""
        array = _frozen(array)
        if array.shape != self.data.shape:
            raise ShapeError("assign", self.data.shape, array.shape)
        self.data = array

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self._graph is None:
            if self.requires_grad and self.size == 1:
                _accumulate_leaf(self, np.ones_like(self.data))
                return
            raise GraphError("backward() on a tensor that was not produced by a recorded op")
        self._graph.backward(self)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # operators

    def __add__(self, other):
        return F.add(self, other)

    def __radd__(self, other):
        return F.add(other, self)

    def __sub__(self, other):
        return F.sub(self, other)

    def __rsub__(self, other):
        return F.sub(other, self)

    def __mul__(self, other):
        return F.mul(self, other)

    def __rmul__(self, other):
        return F.mul(other, self)

    def __truediv__(self, other):
        return F.div(self, other)

    def __rtruediv__(self, other):
        return F.div(other, self)

    def __neg__(self):
        return F.neg(self)

    def __matmul__(self, other):
        return F.matmul(self, other)

    def __rmatmul__(self, other):
        return F.matmul(other, self)

    def __getitem__(self, index):
        return F.index(self, index)

    def sum(self, axis=None, keepdims=False):
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def relu(self):
        return F.relu(self)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor._wrap(np.array(value, dtype=DTYPE))


@dataclass
class OpRecord:
    kind: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
    index: int


class Graph:
    """Append-only tape of op records, consumed by exactly one backward pass."""

    def __init__(self, implicit=False):
        self.records = []
        self.consumed = False
        self._implicit = implicit
        self._tokens = []

    def __enter__(self):
        self._tokens.append(_active_graph.set(self))
        return self

    def __exit__(self, *exc):
        _active_graph.reset(self._tokens.pop())
        return False

    def __len__(self):
        return len(self.records)

    def record(self, kind, inputs, output, vjp):
        if self.consumed:
            raise GraphError("graph already consumed by backward(); call reset() before recording")
        rec = OpRecord(kind, tuple(inputs), output, vjp, len(self.records))
        self.records.append(rec)
        output._record = rec
        output._graph = self
        return rec

    def reset(self):
        for rec in self.records:
            rec.output._record = None
            rec.output._graph = None
        self.records = []
        self.consumed = False

    def is_topological(self):
        for rec in self.records:
            for tensor in rec.inputs:
                if tensor._graph is self and tensor._record.index >= rec.index:
                    return False
        return True

    def backward(self, loss):
        if loss._graph is not self:
            raise GraphError("loss was recorded on a different graph")
        if loss.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise GraphError("backward() called twice on the same graph without reset()")

        pending = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records[: loss._record.index + 1]):
            upstream = pending.pop(id(rec.output), None)
            if upstream is None:
                continue
            for tensor, contribution in zip(rec.inputs, rec.vjp(upstream)):
                if contribution is None or not tensor.requires_grad:
                    continue
                if tensor._graph is self:
                    key = id(tensor)
                    pending[key] = pending[key] + contribution if key in pending else contribution
                else:
                    _accumulate_leaf(tensor, contribution)
        self.consumed = True
        if self._implicit and _active_graph.get() is self:
            _active_graph.set(Graph(implicit=True))


def _accumulate_leaf(tensor, contribution):
    contribution = np.asarray(contribution, dtype=DTYPE).reshape(tensor.shape)
    tensor.grad = contribution.copy() if tensor.grad is None else tensor.grad + contribution


def current_graph():
    graph = _active_graph.get()
    if graph is None:
        graph = Graph(implicit=True)
        _active_graph.set(graph)
    return graph


def is_grad_enabled():
    return _grad_enabled.get()


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


from autodiff import functional as F  # noqa: E402
