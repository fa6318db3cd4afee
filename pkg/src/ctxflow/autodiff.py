"""Dense float64 tensors with reverse-mode automatic differentiation.

Small on purpose: exactly the operations the forecasting models need
(matmul, elementwise arithmetic and activations, concat/split, reductions),
plus numeric gradient checking and an adaptive-moment optimizer. Every
operation validates shapes up front and rejects non-finite results.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class FiniteError(FloatingPointError):
    """A forward-pass value came out NaN or infinite."""


def _as_array(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def _check_finite(data: np.ndarray, op: str) -> None:
    # Summing is an order of magnitude cheaper than isfinite().all() and any
    # NaN/Inf poisons the sum; finite sums cannot overflow at model scale.
    if not np.isfinite(data.sum()):
        raise FiniteError(f"non-finite values produced by {op}")


_grad_enabled = True


@contextmanager
def no_grad():
    """Skip graph construction inside the block (evaluation-only forwards)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A node in the computation graph.

    Leaves are created directly (parameters set ``requires_grad=True``);
    interior nodes are created by the operations below and remember how to
    push gradients back to their parents. Data is immutable by convention
    once a forward pass has consumed it; optimizers update leaf ``data``
    between graphs.
    """

    __slots__ = ("data", "requires_grad", "grad", "_grad_owned", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        _check_finite(self.data, "tensor construction")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._grad_owned = False
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: tuple["Tensor", ...], backward) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._grad_owned = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        # A borrowed grad may alias another node's buffer (or be a read-only
        # broadcast view), so in-place updates require ownership.
        if self.grad is None:
            self.grad = grad
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += grad
        else:
            self.grad = self.grad + grad
            self._grad_owned = True

    def _owned_grad_buffer(self) -> np.ndarray:
        """Writable gradient buffer for scatter-style accumulation."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        elif not self._grad_owned:
            self.grad = self.grad.copy()
        self._grad_owned = True
        return self.grad

    # -- autodiff ------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar loss, populating ``grad`` on the graph.

        Leaves the loss never touched keep ``grad=None``; callers that need
        explicit zeros use :func:`grad_or_zero`.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        self._grad_owned = True
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return hadamard(self, _coerce(other))

    def __rmul__(self, other):
        return hadamard(_coerce(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return hadamard(self, _coerce(1.0 / float(other)))

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def __neg__(self):
        return hadamard(self, _coerce(-1.0))


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order, visiting every reachable node exactly once."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return list(reversed(order))


def grad_or_zero(t: Tensor) -> np.ndarray:
    """Gradient of a leaf after backward; exact zeros if the loss ignored it."""
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
        t._grad_owned = False


# -- elementwise family ----------------------------------------------------


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    # Equal shapes, or numpy-style alignment on trailing axes (the declared
    # broadcast rule; anything else is a contract violation).
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad, b.shape))

    return Tensor._from_op(a.data + b.data, "add", (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-grad, b.shape))

    return Tensor._from_op(a.data - b.data, "sub", (a, b), backward)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product, broadcasting on trailing axes."""
    _broadcast_shape(a, b, "hadamard")

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad * a.data, b.shape))

    return Tensor._from_op(a.data * b.data, "hadamard", (a, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function 1/(1+e^-x).

    exp may overflow to inf for very negative inputs; the quotient still
    rounds to exactly 0, so the result is correct and finite everywhere.
    """
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-x.data))

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * out * (1.0 - out))

    return Tensor._from_op(out, "sigmoid", (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * (1.0 - out * out))

    return Tensor._from_op(out, "tanh", (x,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * (x.data > 0))

    return Tensor._from_op(out, "relu", (x,), backward)


# -- structural ops ----------------------------------------------------------


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """np.matmul with the broadcast cases folded into single GEMM calls.

    Fold sizes are computed explicitly so zero-width operands (empty feature
    blocks) reshape unambiguously.
    """
    if a.ndim == 2 and b.ndim == 2:
        return a @ b
    if b.ndim == 2:
        lead = a.shape[:-1]
        rows = int(np.prod(lead))
        return (a.reshape(rows, a.shape[-1]) @ b).reshape(*lead, b.shape[-1])
    if a.ndim == 2:
        lead = b.shape[:-2]
        k, n = b.shape[-2], b.shape[-1]
        cols = int(np.prod(lead)) * n
        folded = a @ np.moveaxis(b, -2, 0).reshape(k, cols)
        return np.moveaxis(folded.reshape(a.shape[0], *lead, n), 0, -2)
    return np.matmul(a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the two trailing axes; leading axes broadcast."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions differ, {a.shape} x {b.shape}") from None

    def backward(grad):
        lead = int(np.prod(grad.shape[:-1]))
        if a.requires_grad:
            if a.data.ndim == 2 and grad.ndim > 2:
                # sum over broadcast batch, fused into one GEMM
                m, n = grad.shape[-2], grad.shape[-1]
                cols = (lead // m) * n
                grad_flat = np.moveaxis(grad, -2, 0).reshape(m, cols)
                b_full = np.broadcast_to(b.data, (*grad.shape[:-2], *b.shape[-2:]))
                b_flat = np.moveaxis(b_full, -2, 0).reshape(b.shape[-2], cols)
                a._accumulate(grad_flat @ b_flat.T)
            else:
                a._accumulate(_unbroadcast(_mm(grad, b.data.swapaxes(-1, -2)), a.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and grad.ndim > 2:
                k = b.shape[0]
                a_full = np.broadcast_to(a.data, (*grad.shape[:-2], *a.shape[-2:]))
                b._accumulate(a_full.reshape(lead, k).T @ grad.reshape(lead, grad.shape[-1]))
            else:
                gb = _mm(a.data.swapaxes(-1, -2), grad)
                b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor._from_op(_mm(a.data, b.data), "matmul", (a, b), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along one axis; all other dimensions must agree."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    if len(tensors) == 1:
        t = tensors[0]

        def backward_one(grad):
            if t.requires_grad:
                t._accumulate(grad)

        return Tensor._from_op(t.data.copy(), "concat", (t,), backward_one)

    ndim = tensors[0].data.ndim
    ax = axis % ndim
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != ndim or any(r != o for i, (r, o) in enumerate(zip(ref, other)) if i != ax):
            raise ShapeError(
                f"concat: shapes {[tuple(x.shape) for x in tensors]} disagree off axis {axis}"
            )
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * ndim
                index[ax] = slice(lo, hi)
                t._accumulate(grad[tuple(index)])

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=ax), "concat", tuple(tensors), backward)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    ndim = t.data.ndim
    ax = axis % ndim
    if not (0 <= start <= stop <= t.shape[ax]):
        raise ShapeError(f"slice [{start}:{stop}) out of range for axis {axis} of {t.shape}")
    index = [slice(None)] * ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def backward(grad):
        if t.requires_grad:
            # scatter-add into the parent buffer: O(slice), not O(parent)
            t._owned_grad_buffer()[index] += grad

    return Tensor._from_op(t.data[index].copy(), "slice", (t,), backward)


def split(t: Tensor, sizes, axis: int = -1) -> list[Tensor]:
    """Inverse of concat: cut into consecutive blocks of the given sizes."""
    ax = axis % t.data.ndim
    if sum(sizes) != t.shape[ax]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover axis {axis} of {t.shape}")
    out = []
    offset = 0
    for s in sizes:
        out.append(slice_axis(t, ax, offset, offset + s))
        offset += s
    return out


def reshape(t: Tensor, new_shape) -> Tensor:
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} to {new_shape}")

    def backward(grad):
        if t.requires_grad:
            t._accumulate(grad.reshape(t.shape))

    return Tensor._from_op(t.data.reshape(new_shape), "reshape", (t,), backward)


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"reduction axis {a} out of range for ndim {ndim}")
    return tuple(a % ndim for a in axis)


def reduce_sum(t: Tensor, axis=None) -> Tensor:
    axes = _normalize_axes(axis, t.data.ndim)
    out = t.data.sum(axis=axes)

    def backward(grad):
        if t.requires_grad:
            g = np.expand_dims(grad, axis=axes) if axes else grad
            t._accumulate(np.broadcast_to(g, t.shape))

    return Tensor._from_op(out, "sum", (t,), backward)


def reduce_mean(t: Tensor, axis=None) -> Tensor:
    axes = _normalize_axes(axis, t.data.ndim)
    count = int(np.prod([t.shape[a] for a in axes])) if axes else 1
    out = t.data.mean(axis=axes)

    def backward(grad):
        if t.requires_grad:
            g = np.expand_dims(grad, axis=axes) if axes else grad
            t._accumulate(np.broadcast_to(g, t.shape) / count)

    return Tensor._from_op(out, "mean", (t,), backward)


# -- gradient checking -------------------------------------------------------


def grad_check(f, params, epsilon: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` evaluates the scalar loss from the current contents of ``params``
    (building a fresh graph each call); the relative error per coordinate is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    params = list(params)
    zero_grads(params)
    loss = f()
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ShapeError("grad_check needs a scalar Tensor loss")
    loss.backward()
    analytic = [grad_or_zero(p).copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            hi = float(f().data)
            flat[i] = original - epsilon
            lo = float(f().data)
            flat[i] = original
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FiniteError("non-finite loss under perturbation")
            numeric = (hi - lo) / (2.0 * epsilon)
            a = ana.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    zero_grads(params)
    return worst


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter moment accumulators for the adaptive-moment update."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        params = list(params)
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(state: AdamState, params, grads) -> None:
    """One bias-corrected adaptive-moment update, in place on param data."""
    params = list(params)
    grads = list(grads)
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("optimizer state, params and grads must align")
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / (1.0 - state.beta1 ** t)
        v_hat = state.v[i] / (1.0 - state.beta2 ** t)
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform weights on [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)
