"""Operation tape and reverse-mode gradient replay.

Ops record themselves onto the active tape in execution order, which is
topological by construction.  ``backward`` replays the tape once, in
reverse; a tape is single-use and a second replay is a graph error.
"""

import numpy as np

from ..errors import GraphError, ShapeError
from .tensor import Tensor


class TapeNode:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable ops for one forward pass."""

    _active: "Tape | None" = None

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._output_ids: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise GraphError("a tape is already active; tapes do not nest")
        Tape._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape._active = None

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._active

    def record(self, inputs: tuple, output: Tensor, backward_fn) -> None:
        self.nodes.append(TapeNode(inputs, output, backward_fn))
        self._output_ids.add(id(output))

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._output_ids


def backward(tape: Tape, loss: Tensor, params=None) -> None:
    """Populate ``.grad`` for every tracked tensor reachable from ``loss``.

    ``params``, when given, is an iterable of tensors that must end up
    with a grad buffer even if disconnected from the loss (zeros then).
    The tape is consumed: calling backward on it again raises.
    """
    if tape._consumed:
        raise GraphError("tape already consumed by a previous backward")
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be 1x1, got {loss.shape}")
    if not tape.produced(loss):
        raise GraphError("loss tensor was not produced on this tape")
    tape._consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1), dtype=loss.dtype)}
    for node in reversed(tape.nodes):
        gout = grads.pop(id(node.output), None)
        if gout is None:
            continue
        input_grads = node.backward_fn(gout)
        for tensor, g in zip(node.inputs, input_grads):
            if g is None or not tensor.requires_grad:
                continue
            acc = grads.get(id(tensor))
            # no in-place accumulation: backward rules may alias their output
            grads[id(tensor)] = g if acc is None else acc + g

    # leaves keep their gradient; intermediates are discarded with the tape
    for node in tape.nodes:
        for tensor in node.inputs:
            if tensor.requires_grad and not tape.produced(tensor):
                g = grads.get(id(tensor))
                tensor.grad = g if g is not None else np.zeros_like(tensor.data)
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
