import inspect
import logging
from contextlib import contextmanager
from itertools import count
from typing import Callable, Mapping, Sequence

import numpy

from .errors import GradientError, ShapeError

logger = logging.getLogger("cadiff.tensor")

_tape_ids = count(1)
_recording = True

BackwardFn = Callable[[numpy.ndarray], Sequence[numpy.ndarray | None]]


class Tensor:
    """
    Dense float64 array that records the operations producing it, so that
    `backward` can replay them in reverse.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "tape_id", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        op: str = "leaf",
        parents: tuple["Tensor", ...] = (),
        backward_fn: BackwardFn | None = None,
    ):
        self.data: numpy.ndarray = numpy.array(data, dtype=numpy.float64)
        self.grad: numpy.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.tape_id: int | None = next(_tape_ids) if requires_grad else None
        self.op = op
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> numpy.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data, op: str, parents: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    requires_grad = _recording and any(parent.requires_grad for parent in parents)
    if not requires_grad:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, op=op, parents=parents, backward_fn=backward_fn)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return numpy.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from e


def unbroadcast(grad: numpy.ndarray, shape: tuple[int, ...]) -> numpy.ndarray:
    """
    Sums a gradient over the axes that broadcasting added or stretched.
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _result(
        a.data + b.data,
        "add",
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _result(
        a.data - b.data,
        "sub",
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _result(
        a.data * b.data,
        "mul",
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    return _result(
        a.data / b.data,
        "div",
        (a, b),
        lambda g: (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _result(
        a.data**exponent,
        "power",
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
    )


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, "square", (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = numpy.exp(a.data)
    return _result(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(numpy.log(a.data), "log", (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = numpy.sqrt(a.data)
    return _result(out, "sqrt", (a,), lambda g: (g / (2.0 * out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = numpy.tanh(a.data)
    return _result(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _result(
        numpy.maximum(a.data, 0.0), "relu", (a,), lambda g: (g * (a.data > 0.0),)
    )


def _stable_sigmoid(x: numpy.ndarray) -> numpy.ndarray:
    z = numpy.exp(-numpy.abs(x))
    return numpy.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _result(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = numpy.log1p(numpy.exp(-numpy.abs(a.data))) + numpy.maximum(a.data, 0.0)
    return _result(out, "softplus", (a,), lambda g: (g * _stable_sigmoid(a.data),))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("minimum", a, b)
    pick_a = a.data <= b.data
    return _result(
        numpy.where(pick_a, a.data, b.data),
        "minimum",
        (a, b),
        lambda g: (unbroadcast(g * pick_a, a.shape), unbroadcast(g * ~pick_a, b.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _result(
        a.data @ b.data,
        "matmul",
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # pylint: disable=redefined-builtin
    a = as_tensor(a)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = numpy.expand_dims(g, axis)
        return (numpy.broadcast_to(g, a.shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), backward_fn)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) / float(n)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from e
    return _result(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    try:
        out = numpy.concatenate([t.data for t in parts], axis=axis)
    except ValueError as e:
        shapes = [t.shape for t in parts]
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from e
    bounds = numpy.cumsum([t.shape[axis] for t in parts])[:-1]
    return _result(
        out, "concat", parts, lambda g: tuple(numpy.split(g, bounds, axis=axis))
    )


def take(a, index) -> Tensor:
    a = as_tensor(a)

    def backward_fn(g):
        grad = numpy.zeros_like(a.data)
        grad[index] += g
        return (grad,)

    return _result(a.data[index], "take", (a,), backward_fn)


def _topological_order(output: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def forward(graph: Callable[..., Tensor], inputs: Mapping[str, Tensor]) -> Tensor:
    """
    Evaluates a computation description (a callable over named tensors) on the
    given inputs. Shape problems inside the graph surface as `ShapeError`
    naming the failing operation.
    """
    try:
        inspect.signature(graph).bind(**inputs)
    except TypeError as e:
        raise ShapeError(f"{getattr(graph, '__name__', 'graph')}: {e}") from e
    return graph(**{key: as_tensor(value) for key, value in inputs.items()})


def backward(
    output: Tensor, leaves: Mapping[str, Tensor] | None = None
) -> dict[str, numpy.ndarray]:
    """
    Reverse-mode pass from a scalar output. Returns the gradient of every
    requested leaf by name (every named leaf on the tape when `leaves` is None)
    and stores it on the leaf's `grad`.
    """
    if not output.requires_grad:
        raise GradientError("backward called on a detached tensor")
    if output.data.size != 1:
        raise GradientError(f"backward needs a scalar output, got shape {output.shape}")

    grads: dict[int, numpy.ndarray] = {id(output): numpy.ones_like(output.data)}
    tape = _topological_order(output)
    for node in reversed(tape):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad

    if leaves is None:
        leaves = {node.name: node for node in tape if not node._parents and node.name}

    result: dict[str, numpy.ndarray] = {}
    for name, leaf in leaves.items():
        leaf_grad = grads.get(id(leaf))
        leaf.grad = numpy.zeros_like(leaf.data) if leaf_grad is None else leaf_grad
        result[name] = leaf.grad
    logger.debug("backward over %d tape nodes, %d leaves", len(tape), len(result))
    return result


@contextmanager
def no_grad():
    """
    Evaluates without recording a tape (inference on frozen parameters).
    """
    global _recording  # pylint: disable=global-statement
    previous = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = previous
