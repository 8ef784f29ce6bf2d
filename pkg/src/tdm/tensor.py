"""Dense float64 tensors with reverse-mode automatic differentiation.

Storage and elementwise kernels come from numpy; graph construction and every
gradient rule live here. Broadcasting is deliberately limited to
scalar-by-tensor and row-vector bias addition so each rule stays small.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Function",
    "ShapeError",
    "tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "getitem",
    "sum",
    "mean",
    "abs",
    "square",
    "relu",
    "gelu",
    "softmax",
    "layer_norm",
    "embedding_lookup",
    "normalize",
    "zero_grad",
    "no_grad",
]

_grad_enabled = True


@contextmanager
def no_grad():
    """Build no graph inside the block; results are plain constants."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """An n-dimensional float64 array, optionally tracked for backprop.

    ``ctx`` is the :class:`Function` that produced this tensor, or ``None`` for
    leaves. ``grad`` is filled for leaves with ``requires_grad`` after
    :meth:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "ctx", "name")

    def __init__(self, data, requires_grad: bool = False, ctx: "Optional[Function]" = None,
                 name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.ctx = ctx
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this tensor, which must be a scalar unless ``grad`` is given."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        backward(self, grad)


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """A differentiable operation.

    Subclasses implement ``forward`` on raw arrays and ``backward``, which maps
    the output gradient to one gradient (or ``None``) per input.
    """

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        if _grad_enabled and any(t.requires_grad for t in inputs):
            return Tensor(out, requires_grad=True, ctx=fn)
        return Tensor(out)


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.ctx is not None:
            for parent in node.ctx.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(root: Tensor, grad: np.ndarray) -> None:
    """Reverse-topological gradient accumulation from ``root``.

    Gradients reaching a tensor along several paths are summed. Leaf gradients
    accumulate into ``.grad`` across calls; use :func:`zero_grad` between steps.
    """
    if not root.requires_grad:
        return
    grads = {id(root): np.asarray(grad, dtype=np.float64)}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.ctx is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node.ctx.backward(g)
        for parent, pg in zip(node.ctx.inputs, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# arithmetic


class Add(Function):
    def forward(self, a, b):
        self.row = a.shape != b.shape
        return a + b

    def backward(self, grad):
        if self.row:
            return grad, grad.reshape(-1, grad.shape[-1]).sum(axis=0)
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Scale(Function):
    def forward(self, a, c):
        self.c = c
        return a * c

    def backward(self, grad):
        return (grad * self.c,)


class Shift(Function):
    def forward(self, a, c):
        return a + c

    def backward(self, grad):
        return (grad,)


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may be a python scalar or a row vector matching ``a``'s last axis."""
    if _is_scalar(b):
        return Shift.apply(a, c=float(b))
    if _is_scalar(a):
        return Shift.apply(b, c=float(a))
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
            return Add.apply(a, b)
        if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
            return Add.apply(b, a)
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return Shift.apply(a, c=-float(b))
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        return Scale.apply(a, c=float(b))
    if _is_scalar(a):
        return Scale.apply(b, c=float(a))
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return Mul.apply(a, b)


def scale(a: Tensor, c: float) -> Tensor:
    return Scale.apply(a, c=float(c))


def neg(a: Tensor) -> Tensor:
    return Scale.apply(a, c=-1.0)


# ---------------------------------------------------------------------------
# linear algebra and shape


class MatMul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ np.swapaxes(self.b, -1, -2), np.swapaxes(self.a, -1, -2) @ grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading (batch) axes must match exactly."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise ShapeError(f"matmul: need equal-rank operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} x {b.shape}")
    return MatMul.apply(a, b)


class Transpose(Function):
    def forward(self, a, axes):
        self.axes = axes
        return np.transpose(a, axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; by default swaps the last two."""
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need rank >= 2, got {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    return Transpose.apply(a, axes=axes)


class Reshape(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    known = [s for s in shape if s != -1]
    if shape.count(-1) > 1 or (shape.count(-1) == 0 and math.prod(shape) != a.size) or (
        shape.count(-1) == 1 and (math.prod(known) == 0 or a.size % math.prod(known))
    ):
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    return Reshape.apply(a, shape=shape)


class Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.splits = np.cumsum([x.shape[axis] for x in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return np.split(grad, self.splits, axis=self.axis)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shape mismatch {ref} vs {t.shape} along axis {axis}")
    return Concat.apply(*tensors, axis=ax)


class GetItem(Function):
    def forward(self, a, idx):
        self.in_shape, self.idx = a.shape, idx
        return a[idx]

    def backward(self, grad):
        out = np.zeros(self.in_shape)
        np.add.at(out, self.idx, grad)
        return (out,)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate gradient."""
    out = GetItem.apply(a, idx=idx)
    out.data = np.array(out.data, dtype=np.float64)
    return out


# ---------------------------------------------------------------------------
# reductions


def _expand_reduced(grad, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(grad.reshape(()), in_shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(in_shape) for ax in axes)
        grad = np.expand_dims(grad, axes)
    return np.broadcast_to(grad, in_shape)


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.in_shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        return (np.array(_expand_reduced(grad, self.in_shape, self.axis, self.keepdims)),)


class Mean(Function):
    def forward(self, a, axis, keepdims):
        self.in_shape, self.axis, self.keepdims = a.shape, axis, keepdims
        out = np.mean(a, axis=axis, keepdims=keepdims)
        self.count = a.size // max(np.size(out), 1) if a.size else 1
        return out

    def backward(self, grad):
        g = _expand_reduced(grad, self.in_shape, self.axis, self.keepdims)
        return (g / self.count,)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if a.size == 0:
        raise ShapeError("mean: empty tensor")
    return Mean.apply(a, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


class Abs(Function):
    def forward(self, a):
        self.sign = np.sign(a)  # subgradient 0 at 0
        return np.abs(a)

    def backward(self, grad):
        return (grad * self.sign,)


class Square(Function):
    def forward(self, a):
        self.a = a
        return a * a

    def backward(self, grad):
        return (2.0 * self.a * grad,)


class Relu(Function):
    def forward(self, a):
        self.pos = a > 0
        return np.where(self.pos, a, 0.0)

    def backward(self, grad):
        return (grad * self.pos,)


_GELU_C = math.sqrt(2.0 / math.pi)


class Gelu(Function):
    """tanh approximation of GELU."""

    def forward(self, a):
        self.a = a
        self.th = np.tanh(_GELU_C * (a + 0.044715 * a ** 3))
        return 0.5 * a * (1.0 + self.th)

    def backward(self, grad):
        a, th = self.a, self.th
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        d = 0.5 * (1.0 + th) + 0.5 * a * (1.0 - th * th) * dinner
        return (grad * d,)


def abs(a: Tensor) -> Tensor:  # noqa: A001
    return Abs.apply(a)


def square(a: Tensor) -> Tensor:
    return Square.apply(a)


def relu(a: Tensor) -> Tensor:
    return Relu.apply(a)


def gelu(a: Tensor) -> Tensor:
    return Gelu.apply(a)


class Softmax(Function):
    def forward(self, a, axis):
        self.axis = axis
        z = a - np.max(a, axis=axis, keepdims=True)
        e = np.exp(z)
        self.y = e / np.sum(e, axis=axis, keepdims=True)
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - np.sum(grad * y, axis=self.axis, keepdims=True)),)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax. Entries equal to ``-inf`` get exactly zero weight."""
    if not -a.ndim <= axis < max(a.ndim, 1):
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    return Softmax.apply(a, axis=axis)


class LayerNorm(Function):
    def forward(self, x, gain, bias, eps):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.inv
        self.gain = gain
        return self.xhat * gain + bias

    def backward(self, grad):
        n = self.xhat.shape[-1]
        flat = grad.reshape(-1, n)
        dgain = (flat * self.xhat.reshape(-1, n)).sum(axis=0)
        dbias = flat.sum(axis=0)
        gx = grad * self.gain
        dx = self.inv * (
            gx - gx.mean(axis=-1, keepdims=True)
            - self.xhat * (gx * self.xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply ``gain``/``bias``."""
    n = x.shape[-1] if x.ndim else 0
    if n < 1 or gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    return LayerNorm.apply(x, gain, bias, eps=eps)


class EmbeddingLookup(Function):
    def forward(self, table, ids):
        self.rows, self.ids = table.shape, ids
        return table[ids]

    def backward(self, grad):
        out = np.zeros(self.rows)
        np.add.at(out, self.ids, grad)
        return (out,)


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding_lookup: id out of range for {table.shape[0]} rows")
    return EmbeddingLookup.apply(table, ids=ids)


class Normalize(Function):
    def forward(self, v, axis, tiny):
        norm = np.sqrt(np.sum(v * v, axis=axis, keepdims=True))
        self.degenerate = norm <= tiny
        self.axis = axis
        safe = np.where(self.degenerate, 1.0, norm)
        self.inv = np.where(self.degenerate, 0.0, 1.0 / safe)
        self.u = v * self.inv
        return self.u

    def backward(self, grad):
        u = self.u
        return (self.inv * (grad - u * np.sum(grad * u, axis=self.axis, keepdims=True)),)


def normalize(v: Tensor, axis: int = -1, tiny: float = 0.0) -> Tensor:
    """Scale vectors along ``axis`` to unit length; vectors of norm ``<= tiny`` map to zero."""
    return Normalize.apply(v, axis=axis, tiny=tiny)
