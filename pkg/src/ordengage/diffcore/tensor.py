"""Dense float64 tensors and the gradient tape.

Every differentiable operation (see :mod:`ordengage.diffcore.ops`) appends a
node to the innermost active :class:`Tape`.  Nodes are recorded in execution
order, which is a topological order of the computation graph, so
:func:`backward` can replay them in reverse and accumulate gradients with
plain dictionary lookups.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError

__all__ = ["Tensor", "Tape", "backward", "active_tape", "record"]


class Tensor:
    """A dense 64-bit float array, optionally a trainable parameter.

    The flat buffer is row-major (C order). ``requires_grad`` marks leaf
    parameters; gradients only ever flow to leaves with this flag set.
    """

    __slots__ = ("data", "requires_grad", "name", "_needs_grad")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        # True when a gradient may need to pass through this tensor.
        self._needs_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # Thin operator sugar over the primitive ops; imported lazily to avoid a
    # circular module dependency.
    def __add__(self, other):
        from . import ops

        return ops.add(self, _wrap(other))

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _wrap(other))

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, _wrap(other))

    def reshape(self, shape):
        from . import ops

        return ops.reshape(self, shape)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn", "op")

    def __init__(self, out, inputs, backward_fn, op):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitive operations for reverse-mode gradients.

    Use as a context manager around a forward pass::

        with Tape() as tape:
            loss = some_scalar_function(params)
        grads = backward(tape, loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn, op: str = "") -> None:
    """Attach a backward rule for ``out`` to the active tape, if any.

    Nodes whose inputs are all gradient-free constants are skipped; they can
    never contribute to a parameter gradient.
    """
    needs = any(t.requires_grad or t._needs_grad for t in inputs)
    out._needs_grad = needs
    tape = active_tape()
    if tape is not None and needs:
        tape.nodes.append(_Node(out, inputs, backward_fn, op))


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every reachable parameter.

    Returns a map keyed by parameter Tensor (identity).  Non-parameter
    leaves receive no entry.  The walk is deterministic: the same tape
    yields bit-identical gradients on every call.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise ContractError(
            f"backward expects a scalar loss, got shape {loss.data.shape}"
        )

    # Internal accumulation is keyed by id(); node references keep every
    # involved tensor alive for the duration of the walk.
    partial: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def acc(t: Tensor, g: np.ndarray) -> None:
        key = id(t)
        if key in partial:
            partial[key] = partial[key] + g
        else:
            partial[key] = g

    for node in reversed(tape.nodes):
        g = partial.get(id(node.out))
        if g is None:
            continue
        node.backward_fn(np.asarray(g, dtype=np.float64), acc)

    result: dict[Tensor, np.ndarray] = {}
    seen: set[int] = set()
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and id(t) not in seen:
                seen.add(id(t))
                g = partial.get(id(t))
                if g is not None:
                    result[t] = np.asarray(g, dtype=np.float64).reshape(t.data.shape)
    if loss.requires_grad and id(loss) not in seen:
        result[loss] = np.ones_like(loss.data)
    return result
