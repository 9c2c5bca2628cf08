"""Minimal reverse-mode autodiff on 32-bit numpy arrays.

A Tensor wraps a float32 ndarray. Operations (see ops.py) run eagerly and,
while a Graph is active, append one node per operation to the tape. Backward
replays the tape in exact reverse construction order, which is a valid
topological order because every input of a node was created before the node
itself. Gradients are accumulated per tensor identity and returned as a
mapping; the same backward call run twice produces bit-identical results.
"""

from __future__ import annotations

import itertools
import threading

import numpy as np

from ..errors import GraphError

_uid = itertools.count(1)
_active = threading.local()


def _graph_stack() -> list:
    stack = getattr(_active, "stack", None)
    if stack is None:
        stack = []
        _active.stack = stack
    return stack


def active_graph():
    """Return the innermost active Graph, or None outside any context."""
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float32 array with an optional gradient slot.

    Args:
        data: array-like, converted to a C-contiguous float32 ndarray.
        requires_grad: mark this tensor as a learnable leaf. Outputs of
            recorded operations get the flag set automatically.
        name: optional label used in error messages and checkpoints.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "uid")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.uid = next(_uid)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def detach(self) -> "Tensor":
        """A view of the same data that never records onto a graph."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{label}, requires_grad={self.requires_grad})"


class Node:
    """One recorded operation: output, inputs, and a backward closure."""

    __slots__ = ("out", "inputs", "backward", "op_name")

    def __init__(self, out: Tensor, inputs: tuple, backward, op_name: str):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.op_name = op_name


class Gradients:
    """Read-only mapping from tensor to its accumulated gradient.

    Tensors that did not influence the loss resolve to a zero array of the
    parameter's shape rather than raising.
    """

    def __init__(self, by_uid: dict):
        self._by_uid = by_uid

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        grad = self._by_uid.get(tensor.uid)
        if grad is None:
            return np.zeros_like(tensor.data)
        return grad

    def __contains__(self, tensor: Tensor) -> bool:
        return tensor.uid in self._by_uid


class Graph:
    """Records operations while active and differentiates a scalar loss.

    Use as a context manager::

        with Graph() as g:
            loss = some_ops(params, inputs)
        grads = g.backward(loss)

    Only the innermost active graph records. After backward the tape stays
    intact, so calling backward again is allowed and deterministic.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _graph_stack()
        if not stack or stack[-1] is not self:
            raise GraphError("graph context exited out of order")
        stack.pop()

    def record(self, out: Tensor, inputs: tuple, backward, op_name: str) -> None:
        self.nodes.append(Node(out, inputs, backward, op_name))

    def backward(self, loss: Tensor, wrt: list | None = None) -> Gradients:
        """Accumulate d(loss)/d(tensor) for every tensor on the tape.

        Args:
            loss: scalar (size-1) tensor produced while this graph was active.
            wrt: optional list of tensors; their .grad slots are assigned
                (zeros if disconnected). Other tensors keep grad untouched.

        Returns:
            Gradients mapping for every tensor that received a gradient.
        """
        if loss.data.size != 1:
            raise GraphError(
                f"backward needs a scalar loss, got shape {loss.data.shape}"
            )
        by_uid: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g_out = by_uid.get(node.out.uid)
            if g_out is None:
                continue
            for tensor, grad in zip(node.inputs, node.backward(g_out)):
                if grad is None:
                    continue
                slot = by_uid.get(tensor.uid)
                if slot is None:
                    by_uid[tensor.uid] = grad.astype(np.float32, copy=False)
                else:
                    by_uid[tensor.uid] = slot + grad
        grads = Gradients(by_uid)
        if wrt is not None:
            for tensor in wrt:
                tensor.grad = grads[tensor]
        return grads
