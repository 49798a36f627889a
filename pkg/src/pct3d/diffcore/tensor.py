"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation that receives at least one tensor requiring a gradient records
a :class:`Node` on its output.  :func:`backward` linearises the recorded graph
into a :class:`Tape` (topological order, inputs before outputs) and sweeps it
in reverse.  The graph is rebuilt from scratch on every forward pass.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError

_recording = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, finite differences)."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


class Node:
    __slots__ = ("inputs", "backward", "op")

    def __init__(self, inputs: tuple, backward: Callable, op: str):
        self.inputs = inputs
        self.backward = backward
        self.op = op


class Tensor:
    """An n-dimensional float64 array that can participate in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tape_id(self) -> Optional[int]:
        return id(self._node) if self._node is not None else None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; the functional forms live in ``ops``.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __mul__(self, c):
        from . import ops
        return ops.scale(self, c)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


class Parameter(Tensor):
    """A learnable leaf tensor with gradient and momentum buffers of its own shape."""

    __slots__ = ("velocity",)

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)
        self.velocity = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name or ''}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap an op result, checking finiteness and recording a node when needed."""
    # NaN/Inf anywhere propagates into x.x (a BLAS dot, cheaper than a sum);
    # an overflowing square is a false alarm that the exact test clears
    if data.size:
        flat = data.reshape(-1) if data.flags.c_contiguous else None
        total = np.dot(flat, flat) if flat is not None else np.add.reduce(data, axis=None)
        if not np.isfinite(total) and not np.all(np.isfinite(data)):
            raise FloatingPointError(f"{op} produced NaN or Inf")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = _recording and any(t.requires_grad for t in inputs)
    out._node = Node(tuple(inputs), backward, op) if out.requires_grad else None
    return out


class Tape:
    """Recorded operations of one forward pass in topological order."""

    def __init__(self, tensors: list):
        self.tensors = tensors

    @property
    def nodes(self) -> list:
        return [t._node for t in self.tensors if t._node is not None]

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        order = []
        visited = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in visited:
                continue
            visited.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for inp in t._node.inputs:
                    if inp.requires_grad and id(inp) not in visited:
                        stack.append((inp, False))
        return cls(order)

    def backward(self, output: Tensor, seed: Optional[np.ndarray] = None):
        grads = {id(output): np.ones_like(output.data) if seed is None else seed}
        for t in reversed(self.tensors):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._node is None:
                if t.grad is None:
                    t.grad = g.copy()
                else:
                    t.grad += g
                continue
            in_grads = t._node.backward(g)
            for inp, ig in zip(t._node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on a tape (no input requires a gradient)")
    tape = Tape.from_output(loss)
    tape.backward(loss)
    return tape
