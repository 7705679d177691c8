"""Dense 4-D tensors with tape-based reverse-mode automatic differentiation.

Every value is a ``(batch, channel, height, width)`` numpy array; scalars
(losses) live in shape ``(1, 1, 1, 1)``.  Operations in :mod:`frpose.ops`
record themselves on the currently active :class:`Graph`; running them with
no active graph (or on inputs that do not require gradients) is a pure
forward pass, which is how evaluation runs.

Gradients are allocated lazily: ``tensor.grad`` stays ``None`` until the
first accumulation reaches it during :meth:`Graph.backward`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "active_graph",
    "default_dtype",
    "precision",
    "record",
]

_FLOAT_KINDS = {"single": np.float32, "double": np.float64}
_default_dtype = np.float32


class ShapeError(ValueError):
    """Raised when an operation is handed extents it cannot consume."""


def default_dtype() -> type:
    """Dtype used for tensors built from non-float32/float64 payloads."""
    return _default_dtype


@contextlib.contextmanager
def precision(kind: str) -> Iterator[None]:
    """Temporarily switch the default dtype (``"single"`` or ``"double"``).

    The wide ``"double"`` mode exists for finite-difference gradient
    checking, where float32 rounding would drown the comparison.
    """
    global _default_dtype
    if kind not in _FLOAT_KINDS:
        raise ValueError(f"unknown precision {kind!r}; expected 'single' or 'double'")
    previous = _default_dtype
    _default_dtype = _FLOAT_KINDS[kind]
    try:
        yield
    finally:
        _default_dtype = previous


class Tensor:
    """A 4-D array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32,
                                                               np.float64):
                arr = data
            else:
                arr = np.asarray(data, dtype=_default_dtype)
        else:
            arr = np.asarray(data, dtype=dtype)
        if arr.ndim != 4:
            raise ShapeError(
                f"tensors are (batch, channel, height, width); got {arr.ndim} "
                f"dims with shape {arr.shape}"
            )
        if min(arr.shape) < 1:
            raise ShapeError(f"all extents must be >= 1; got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match value shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"


class _Node:
    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name, inputs, output, backward):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


_GRAPH_STACK: list["Graph"] = []


def active_graph() -> Optional["Graph"]:
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


class Graph:
    """Execution tape: ops append nodes in forward order, backward replays
    them once in reverse.  Use as a context manager so intermediates are
    freed when the step ends::

        with Graph() as g:
            loss = ...
            g.backward(loss)
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Graph":
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _GRAPH_STACK.remove(self)
        self.clear()

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, name: str, inputs: Sequence[Tensor], output: Tensor,
               backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> None:
        self._nodes.append(_Node(name, tuple(inputs), output, backward))

    def backward(self, loss: Tensor, seed: Optional[np.ndarray] = None) -> None:
        """Accumulate d(loss)/d(tensor) into every tensor on the path.

        Each recorded node is visited exactly once, in reverse execution
        order; nodes whose output never received a gradient are skipped
        (they do not feed ``loss``).
        """
        if seed is None:
            seed = np.ones_like(loss.data)
        loss.accumulate_grad(np.asarray(seed, dtype=loss.data.dtype))
        for node in reversed(self._nodes):
            out_grad = node.output.grad
            if out_grad is None:
                continue
            grads = node.backward(out_grad)
            for tensor, grad in zip(node.inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                tensor.accumulate_grad(grad)

    def clear(self) -> None:
        """Drop all nodes (and with them the saved intermediates)."""
        self._nodes.clear()


def record(name: str, inputs: Sequence[Tensor], output: Tensor,
           backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Attach ``output`` to the active graph if any input wants gradients."""
    graph = active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        graph.record(name, inputs, output, backward)
    return output
