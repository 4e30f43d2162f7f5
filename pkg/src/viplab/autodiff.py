"""Minimal deterministic reverse-mode autodiff over float64 numpy arrays.

Only the operations needed by the epsilon-prediction networks and their
training losses are implemented: matmul, broadcast add/sub/mul, silu,
log-sigmoid, axis sums and means. Every op works on either ``Tensor``
nodes or plain ndarrays through operator overloading, so network forward
code is written once and serves both the differentiable and the
inference path with bit-identical arithmetic.

Gradients accumulate in construction order of the graph, which is fixed
by the (single-threaded) forward code, so backward passes are exactly
reproducible.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when an operand dimension does not match the expected one."""


class GradientError(RuntimeError):
    """Raised when backward is attempted from a non-finite or non-scalar loss."""


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting introduced."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """One node of the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # Defer mixed ndarray/Tensor arithmetic to the Tensor operators.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        a, b = self, _lift(other)
        out_data = a.data + b.data

        def backward(grad):
            a._accumulate(_unbroadcast(grad, a.data.shape))
            b._accumulate(_unbroadcast(grad, b.data.shape))

        return Tensor._node(out_data, (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, _lift(other)
        out_data = a.data - b.data

        def backward(grad):
            a._accumulate(_unbroadcast(grad, a.data.shape))
            b._accumulate(_unbroadcast(-grad, b.data.shape))

        return Tensor._node(out_data, (a, b), backward)

    def __rsub__(self, other):
        return _lift(other).__sub__(self)

    def __mul__(self, other):
        a, b = self, _lift(other)
        out_data = a.data * b.data

        def backward(grad):
            a._accumulate(_unbroadcast(grad * b.data, a.data.shape))
            b._accumulate(_unbroadcast(grad * a.data, b.data.shape))

        return Tensor._node(out_data, (a, b), backward)

    __rmul__ = __mul__

    def __neg__(self):
        a = self
        return Tensor._node(-a.data, (a,), lambda grad: a._accumulate(-grad))

    def __matmul__(self, other):
        a, b = self, _lift(other)
        out_data = a.data @ b.data

        def backward(grad):
            a._accumulate(grad @ b.data.T)
            b._accumulate(a.data.T @ grad)

        return Tensor._node(out_data, (a, b), backward)

    def __rmatmul__(self, other):
        return _lift(other).__matmul__(self)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Parameter(Tensor):
    """Trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


# -- dual-mode primitives (Tensor node or plain ndarray) ---------------------


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows; the two branches share it.
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def silu(x):
    """x * sigmoid(x)."""
    if not isinstance(x, Tensor):
        data = _as_array(x)
        return data * _sigmoid_np(data)
    sig = _sigmoid_np(x.data)
    out_data = x.data * sig

    def backward(grad):
        x._accumulate(grad * (sig * (1.0 + x.data * (1.0 - sig))))

    return Tensor._node(out_data, (x,), backward)


def logsigmoid(x):
    """log(sigmoid(x)), computed as -softplus(-x) for stability."""
    if not isinstance(x, Tensor):
        return -np.logaddexp(0.0, -_as_array(x))
    out_data = -np.logaddexp(0.0, -x.data)

    def backward(grad):
        x._accumulate(grad * _sigmoid_np(-x.data))

    return Tensor._node(out_data, (x,), backward)


def sum_rows(x):
    """Sum over the last axis: (batch, d) -> (batch,)."""
    if not isinstance(x, Tensor):
        return _as_array(x).sum(axis=-1)
    out_data = x.data.sum(axis=-1)

    def backward(grad):
        x._accumulate(np.broadcast_to(grad[..., None], x.data.shape).copy())

    return Tensor._node(out_data, (x,), backward)


def mean_all(x):
    """Mean over all entries -> scalar."""
    if not isinstance(x, Tensor):
        return float(_as_array(x).mean())
    n = x.data.size
    out_data = np.asarray(x.data.mean())

    def backward(grad):
        x._accumulate(np.full_like(x.data, float(grad) / n))

    return Tensor._node(out_data, (x,), backward)


def value(x) -> np.ndarray:
    """Underlying ndarray of a Tensor, or the array itself."""
    return x.data if isinstance(x, Tensor) else _as_array(x)


# -- backward ----------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad on every reachable Parameter from a scalar loss node.

    Raises before touching any gradient if the loss is non-finite, so a
    failing step never leaves partial gradients behind.
    """
    if not isinstance(loss, Tensor):
        raise GradientError("backward needs a Tensor loss node")
    if loss.data.size != 1:
        raise GradientError(f"loss must be scalar, got shape {loss.data.shape}")
    if not np.isfinite(loss.data).all():
        raise GradientError("loss is non-finite; no gradients computed")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
