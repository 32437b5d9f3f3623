"""Dense float tensors and a reverse-mode automatic differentiation tape.

The tape is an ordered op log: running an op inside a ``with GradTape()``
block appends one node whose inputs always precede it, so one reverse sweep
visits every node exactly once. Ops called with no tape active just compute
values, which keeps evaluation cheap.

Buffers are float32. A float64 mode exists solely so finite-difference
gradient checks can be run with a tighter step; flip it with
``set_default_dtype`` or the ``using_dtype`` context manager.
"""

from __future__ import annotations

import os
import threading
from contextlib import contextmanager
from typing import Callable, Optional

import numpy as np

from .errors import ContractError, InvalidShapeError

_DTYPE = np.dtype(np.float32)
_DEBUG_NAN = bool(os.environ.get("RDCNET_DEBUG_NAN"))


def default_dtype() -> np.dtype:
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported dtype {dt}; use float32 or float64")
    _DTYPE = dt


@contextmanager
def using_dtype(dtype):
    """Temporarily switch the buffer dtype (gradient-check tightening only)."""
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def _checked_shape(shape) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if not dims:
        raise InvalidShapeError("shape must have at least one dimension")
    if any(d < 1 for d in dims):
        raise InvalidShapeError(f"every dimension must be >= 1, got {list(dims)}")
    return dims


class Tensor:
    """A dense n-dimensional float tensor (contiguous, row-major).

    Values produced by ops are treated as immutable; only leaf parameters are
    updated in place (by the optimizer, between tapes). Scalars are shape
    ``(1,)`` — there are no zero-dimensional tensors.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.ascontiguousarray(data, dtype=_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        _checked_shape(arr.shape)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {list(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def sum(self) -> "Tensor":
        return _sum(self)

    def __add__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return _add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return _mul(self, other)
        if isinstance(other, (int, float)):
            return _scale(self, float(other))
        return NotImplemented

    __rmul__ = __mul__

    def __repr__(self):
        name = f" name={self.name!r}" if self.name else ""
        grad = " grad" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{name}{grad})"


def zeros(shape, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(np.zeros(_checked_shape(shape), dtype=_DTYPE), requires_grad, name)


def full(shape, value: float, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(np.full(_checked_shape(shape), value, dtype=_DTYPE), requires_grad, name)


def uniform(shape, seed: int, low: float = 0.0, high: float = 1.0,
            requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    rng = np.random.default_rng(seed)
    data = rng.uniform(low, high, _checked_shape(shape)).astype(_DTYPE)
    return Tensor(data, requires_grad, name)


def normal(shape, seed: int, mean: float = 0.0, std: float = 1.0,
           requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    rng = np.random.default_rng(seed)
    data = (mean + std * rng.standard_normal(_checked_shape(shape))).astype(_DTYPE)
    return Tensor(data, requires_grad, name)


# --- tape ------------------------------------------------------------------

_tapes = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tapes, "stack", None)
    if stack is None:
        stack = _tapes.stack = []
    return stack


def active_tape() -> Optional["GradTape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class TapeNode:
    __slots__ = ("op", "inputs", "tensor", "rule", "needs_grad")

    def __init__(self, op: str, inputs: tuple, tensor: Tensor,
                 rule: Optional[Callable], needs_grad: bool):
        self.op = op
        self.inputs = inputs
        self.tensor = tensor
        self.rule = rule
        self.needs_grad = needs_grad


class GradTape:
    """Ordered log of executed ops.

    Node input indices always point backwards, so the log is topologically
    ordered by construction. A node's ``rule`` maps the upstream gradient to
    one gradient per input (``None`` for non-differentiable legs).
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._node_of: dict[int, int] = {}

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        top = _tape_stack().pop()
        if top is not self:
            raise RuntimeError("GradTape contexts must nest properly")
        return False

    def watch(self, tensor: Tensor) -> None:
        """Register a leaf so backward reports a gradient for it even if the
        loss never touches it (zeros, matching shape)."""
        self._ensure(tensor)

    def index_of(self, tensor: Tensor) -> Optional[int]:
        return self._node_of.get(id(tensor))

    def _ensure(self, tensor: Tensor) -> int:
        idx = self._node_of.get(id(tensor))
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(TapeNode("leaf", (), tensor, None, tensor.requires_grad))
            self._node_of[id(tensor)] = idx
        return idx

    def record(self, op: str, inputs: tuple, out: Tensor, rule: Callable) -> None:
        in_idx = tuple(self._ensure(t) for t in inputs)
        needs = any(self.nodes[i].needs_grad for i in in_idx)
        self.nodes.append(TapeNode(op, in_idx, out, rule if needs else None, needs))
        self._node_of[id(out)] = len(self.nodes) - 1

    def backward(self, loss: Tensor) -> dict[str, Tensor]:
        return backward(self, loss)


def record_op(op: str, inputs: tuple, out: Tensor, rule: Callable) -> Tensor:
    """Register an op result on the active tape (no-op when none is active)."""
    if _DEBUG_NAN and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"non-finite values produced by op {op!r}")
    tape = active_tape()
    if tape is not None:
        tape.record(op, inputs, out, rule)
    return out


def backward(tape: GradTape, loss: Tensor) -> dict[str, Tensor]:
    """Reverse sweep from ``loss``; one visit per node.

    Returns gradients for every requires_grad leaf on the tape, keyed by the
    leaf's name (auto-keyed ``leaf:<index>`` when unnamed). Leaves the loss
    never reached get zero gradients of matching shape. Rules hand back fresh
    or read-only arrays; accumulation here never mutates them.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {list(loss.shape)}")
    start = tape.index_of(loss)
    if start is None:
        raise ContractError("loss was not produced on this tape")

    grads: list[Optional[np.ndarray]] = [None] * len(tape.nodes)
    grads[start] = np.ones_like(loss.data)
    for i in range(start, -1, -1):
        node = tape.nodes[i]
        g = grads[i]
        if g is None or node.rule is None:
            continue
        grads[i] = None
        need = tuple(tape.nodes[j].needs_grad for j in node.inputs)
        for j, gj in zip(node.inputs, node.rule(g, need)):
            if gj is None or not tape.nodes[j].needs_grad:
                continue
            prev = grads[j]
            grads[j] = gj if prev is None else prev + gj

    result: dict[str, Tensor] = {}
    for i, node in enumerate(tape.nodes):
        t = node.tensor
        if node.op != "leaf" or not t.requires_grad:
            continue
        key = t.name if t.name is not None else f"leaf:{i}"
        if key in result:
            raise ContractError(f"duplicate parameter name on tape: {key!r}")
        g = grads[i]
        result[key] = Tensor(g if g is not None else np.zeros_like(t.data))
    return result


def accumulate_grad(existing: Tensor, incoming: Tensor) -> Tensor:
    """Element-wise sum of two gradient tensors of identical shape."""
    if existing.shape != incoming.shape:
        raise ContractError(
            f"gradient shape mismatch: {list(existing.shape)} vs {list(incoming.shape)}")
    return Tensor(existing.data + incoming.data)


# --- elementary taped ops ----------------------------------------------------

def _add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ContractError(f"add: shape mismatch {list(a.shape)} vs {list(b.shape)}")
    out = Tensor(a.data + b.data)

    def rule(g, need):
        return g, g

    return record_op("add", (a, b), out, rule)


def _mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ContractError(f"mul: shape mismatch {list(a.shape)} vs {list(b.shape)}")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def rule(g, need):
        return g * bd, g * ad

    return record_op("mul", (a, b), out, rule)


def _scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)

    def rule(g, need):
        return (g * s,)

    return record_op("scale", (a,), out, rule)


def _sum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(dtype=a.data.dtype))
    shape = a.data.shape

    def rule(g, need):
        return (np.broadcast_to(g, shape),)

    return record_op("sum", (a,), out, rule)
