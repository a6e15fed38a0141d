"""
Dense tensors with reverse-mode differentiation.

A `Tensor` wraps a numpy array. Every differentiable operation is a `Function`
subclass; applying it records the function as the creator of its output so
`backward` can walk the graph from a scalar root back to the leaves.
"""
import contextlib
import contextvars
import logging
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ContractError, DimensionError, NonFiniteError

logger = logging.getLogger(__name__)

REGULARIZATION_TAGS = ('none', 'elastic-net', 'l2')

_default_dtype = contextvars.ContextVar('rinv_default_dtype', default=np.float32)
_finite_checks = contextvars.ContextVar('rinv_finite_checks', default=False)


def get_default_dtype():
    return _default_dtype.get()


@contextlib.contextmanager
def default_dtype(dtype):
    """Use `dtype` for every tensor built from non-float data inside the block."""
    token = _default_dtype.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _default_dtype.reset(token)


def precision_dtype(bits: int):
    if bits == 64:
        return np.float64
    if bits == 32:
        return np.float32
    raise ContractError(f"precision must be 32 or 64, got {bits}")


@contextlib.contextmanager
def finite_checks(enabled: bool = True):
    """Assert that kernels fed with finite inputs return finite outputs."""
    token = _finite_checks.set(enabled)
    try:
        yield
    finally:
        _finite_checks.reset(token)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out the axes numpy broadcasting added so `grad` matches `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """
    Base class for differentiable operations.

    `forward` receives the numpy data of the input tensors and returns a numpy
    array. `backward` receives dL/d(output) and returns one gradient (or None)
    per input tensor.
    """

    def __init__(self, *tensors: 'Tensor'):
        self.tensors = tensors

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> 'Tensor':
        tensors = tuple(as_tensor(t) for t in inputs)
        func = cls(*tensors)
        out = np.asarray(func.forward(*(t.data for t in tensors), **kwargs))
        if _finite_checks.get() and not np.all(np.isfinite(out)):
            if all(np.all(np.isfinite(t.data)) for t in tensors):
                raise NonFiniteError(f"{cls.__name__} produced non-finite values from finite inputs")
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, creator=func if requires_grad else None)


class Tensor:
    """
    Dense N-dimensional array plus the bookkeeping reverse-mode needs.

    Float arrays keep their precision; anything else is converted to the
    current default dtype (see `default_dtype`).
    """

    def __init__(self, data: Any, requires_grad: bool = False, creator: Optional[Function] = None):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray) and data.dtype.kind == 'f':
            self.data = data
        else:
            self.data = np.asarray(data, dtype=get_default_dtype())
        if 0 in self.data.shape:
            raise DimensionError(f"tensor dimensions must be >= 1, got shape {self.data.shape}")
        self.requires_grad = requires_grad
        self.creator = creator
        self.grad: Optional[np.ndarray] = None

    # --- metadata ---------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self) -> Dict['Parameter', np.ndarray]:
        return backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # --- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Add.apply(self, Neg.apply(other))

    def __rsub__(self, other):
        return Add.apply(other, Neg.apply(self))

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(other, self)

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __rtruediv__(self, other):
        return Div.apply(other, self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, exponent):
        return Pow.apply(self, exponent)

    def __matmul__(self, other):
        return Matmul.apply(self, other)

    def __getitem__(self, index):
        return GetItem.apply(self, index=index)

    # --- unary / shape ----------------------------------------------------
    def exp(self):
        return Exp.apply(self)

    def log(self):
        return Log.apply(self)

    def abs(self):
        return Abs.apply(self)

    def relu(self):
        return Relu.apply(self)

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def max(self, axis: int = -1, keepdims=False):
        return Max.apply(self, axis=axis, keepdims=keepdims)

    def min(self, axis: int = -1, keepdims=False):
        return Neg.apply(Max.apply(Neg.apply(self), axis=axis, keepdims=keepdims))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    def roll(self, shift: int, axis: int):
        return Roll.apply(self, shift=shift, axis=axis)


class Parameter(Tensor):
    """A named, trainable leaf tensor."""

    def __init__(self, name: str, data: Any, regularization: str = 'none'):
        super().__init__(data, requires_grad=True)
        if regularization not in REGULARIZATION_TAGS:
            raise ContractError(f"unknown regularization tag {regularization!r}")
        self.name = name
        self.regularization = regularization

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, regularization={self.regularization!r})"


def as_tensor(value: Any) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def backward(root: Tensor) -> Dict[Parameter, np.ndarray]:
    """
    Reverse-mode sweep from a scalar root.

    Gradients are accumulated into `.grad` of every leaf that requires them;
    the returned map holds this sweep's gradient for each Parameter reached.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.tensors:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

    grads: Dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    result: Dict[Parameter, np.ndarray] = {}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.creator is None:
            node.grad = grad if node.grad is None else node.grad + grad
            if isinstance(node, Parameter):
                result[node] = grad
            continue
        parent_grads = node.creator.backward(grad)
        for parent, parent_grad in zip(node.creator.tensors, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent_grad.shape != parent.shape:
                raise DimensionError(
                    f"{type(node.creator).__name__} returned gradient of shape "
                    f"{parent_grad.shape} for input of shape {parent.shape}")
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
    return result


def zero_grad(params: Iterable[Tensor]):
    for p in params:
        p.zero_grad()


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------
class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        a, b = self.tensors
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.tensors
        return unbroadcast(grad * b.data, a.shape), unbroadcast(grad * a.data, b.shape)


class Div(Function):
    def forward(self, a, b):
        return a / b

    def backward(self, grad):
        a, b = self.tensors
        ga = unbroadcast(grad / b.data, a.shape)
        gb = unbroadcast(-grad * a.data / (b.data * b.data), b.shape)
        return ga, gb


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Pow(Function):
    def forward(self, a, b):
        self.out = np.power(a, b)
        return self.out

    def backward(self, grad):
        a, b = self.tensors
        ga = unbroadcast(grad * b.data * np.power(a.data, b.data - 1), a.shape)
        gb = None
        if b.requires_grad:
            gb = unbroadcast(grad * self.out * np.log(a.data), b.shape)
        return ga, gb


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, a):
        return np.log(a)

    def backward(self, grad):
        return (grad / self.tensors[0].data,)


class Abs(Function):
    def forward(self, a):
        return np.abs(a)

    def backward(self, grad):
        return (grad * np.sign(self.tensors[0].data),)


class Relu(Function):
    def forward(self, a):
        return np.maximum(a, 0)

    def backward(self, grad):
        return (grad * (self.tensors[0].data > 0),)


# --------------------------------------------------------------------------
# reductions
# --------------------------------------------------------------------------
def _expand_reduced(grad, shape, axis, keepdims):
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape)


def _reduced_count(shape, axis):
    if axis is None:
        return int(np.prod(shape))
    axes = axis if isinstance(axis, tuple) else (axis,)
    return int(np.prod([shape[a] for a in axes]))


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.axis, self.keepdims = axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape = self.tensors[0].shape
        return (np.array(_expand_reduced(grad, shape, self.axis, self.keepdims)),)


class Mean(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.axis, self.keepdims = axis, keepdims
        return np.mean(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape = self.tensors[0].shape
        count = _reduced_count(shape, self.axis)
        return (np.array(_expand_reduced(grad, shape, self.axis, self.keepdims)) / count,)


class Max(Function):
    """Max along one axis; the gradient goes to the first maximal entry."""

    def forward(self, a, axis=-1, keepdims=False):
        self.axis, self.keepdims = axis, keepdims
        self.argmax = np.argmax(a, axis=axis)
        return np.max(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        a = self.tensors[0].data
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        mask = np.zeros_like(a)
        np.put_along_axis(mask, np.expand_dims(self.argmax, self.axis), 1, axis=self.axis)
        return (mask * grad,)


# --------------------------------------------------------------------------
# shape manipulation
# --------------------------------------------------------------------------
class Reshape(Function):
    def forward(self, a, shape=()):
        return np.reshape(a, shape)

    def backward(self, grad):
        return (np.reshape(grad, self.tensors[0].shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.axes = axes if axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Roll(Function):
    def forward(self, a, shift=0, axis=0):
        self.shift, self.axis = shift, axis
        return np.roll(a, shift, axis=axis)

    def backward(self, grad):
        return (np.roll(grad, -self.shift, axis=self.axis),)


class Rot90(Function):
    """Exact quarter-turn rotation of the last two axes."""

    def forward(self, a, quarters=1):
        self.quarters = quarters % 4
        return np.ascontiguousarray(np.rot90(a, self.quarters, axes=(-2, -1)))

    def backward(self, grad):
        return (np.ascontiguousarray(np.rot90(grad, -self.quarters, axes=(-2, -1))),)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


class GetItem(Function):
    def forward(self, a, index=None):
        self.index = index
        return np.array(a[index])

    def backward(self, grad):
        out = np.zeros_like(self.tensors[0].data)
        if _is_basic_index(self.index):
            out[self.index] = grad
        else:
            np.add.at(out, self.index, grad)
        return (out,)


class Pad(Function):
    """Zero padding of the last two axes."""

    def forward(self, a, pad=0):
        self.pad = pad
        widths = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
        return np.pad(a, widths)

    def backward(self, grad):
        p = self.pad
        if p == 0:
            return (grad,)
        return (np.array(grad[..., p:-p, p:-p]),)


class Stack(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        return np.stack(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.take(grad, i, axis=self.axis) for i in range(len(self.tensors)))


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


def stack(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    return Stack.apply(*tensors, axis=axis)


def concat(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


# --------------------------------------------------------------------------
# linear algebra and neural-network kernels
# --------------------------------------------------------------------------
class Matmul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.tensors
        ga = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


class Softmax(Function):
    def forward(self, a, axis=-1):
        self.axis = axis
        shifted = np.exp(a - np.max(a, axis=axis, keepdims=True))
        self.out = shifted / np.sum(shifted, axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - np.sum(grad * y, axis=self.axis, keepdims=True)),)


class LogSoftmax(Function):
    def forward(self, a, axis=-1):
        self.axis = axis
        shifted = a - np.max(a, axis=axis, keepdims=True)
        self.out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
        return self.out

    def backward(self, grad):
        softmax = np.exp(self.out)
        return (grad - softmax * np.sum(grad, axis=self.axis, keepdims=True),)


class MaskedScale(Function):
    """Multiply by a constant mask; dropout uses it with the inverted keep scale."""

    def forward(self, a, mask=None):
        self.mask = mask
        return a * mask

    def backward(self, grad):
        return (grad * self.mask,)


class Conv2d(Function):
    """
    Cross-correlation of [B, Ci, H, W] with [Co, Ci, kh, kw] under zero padding.
    """

    def forward(self, x, w, stride=1, pad=0):
        if x.ndim != 4 or w.ndim != 4:
            raise DimensionError(f"conv2d needs [B,C,H,W] and [Co,Ci,kh,kw], got {x.shape} and {w.shape}")
        if x.shape[1] != w.shape[1]:
            raise DimensionError(f"conv2d channel mismatch: input {x.shape[1]}, kernel {w.shape[1]}")
        self.stride, self.pad = stride, pad
        kh, kw = w.shape[2:]
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        if xp.shape[2] < kh or xp.shape[3] < kw:
            raise DimensionError(f"kernel {w.shape[2:]} larger than padded input {xp.shape[2:]}")
        windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        self.windows = windows[:, :, ::stride, ::stride]
        self.padded_shape = xp.shape
        out = np.tensordot(self.windows, w, axes=([1, 4, 5], [1, 2, 3]))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, grad):
        x, w = self.tensors
        s, p = self.stride, self.pad
        kh, kw = w.shape[2:]
        ho, wo = grad.shape[2:]
        gw = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3])) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gwin = np.tensordot(grad, w.data, axes=([1], [0]))  # B, Ho, Wo, Ci, kh, kw
            gxp = np.zeros(self.padded_shape, dtype=grad.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += \
                        gwin[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            h, wd = x.shape[2:]
            gx = np.array(gxp[:, :, p:p + h, p:p + wd])
        return gx, gw


class BilinearSample(Function):
    """
    Sample the last two axes of an image at continuous (row, col) coordinates.

    Samples falling outside the image read zeros, so the operator stays linear.
    Coordinates are constants; the gradient flows to the image only.
    """

    def forward(self, image, coords=None):
        h, w = image.shape[-2:]
        rows, cols = coords[:, 0], coords[:, 1]
        r0 = np.floor(rows).astype(np.int64)
        c0 = np.floor(cols).astype(np.int64)
        fr = (rows - r0).astype(image.dtype)
        fc = (cols - c0).astype(image.dtype)
        self.corners = []
        flat = image.reshape(-1, h * w)
        out = np.zeros((flat.shape[0], coords.shape[0]), dtype=image.dtype)
        for dr, dc, weight in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                               (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
            rr, cc = r0 + dr, c0 + dc
            valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            index = np.clip(rr, 0, h - 1) * w + np.clip(cc, 0, w - 1)
            weight = np.where(valid, weight, 0).astype(image.dtype)
            self.corners.append((index, weight))
            out += flat[:, index] * weight
        return out.reshape(image.shape[:-2] + (coords.shape[0],))

    def backward(self, grad):
        image = self.tensors[0]
        h, w = image.shape[-2:]
        flat_grad = grad.reshape(-1, grad.shape[-1])
        out = np.zeros((h * w, flat_grad.shape[0]), dtype=grad.dtype)
        for index, weight in self.corners:
            np.add.at(out, index, (flat_grad * weight).T)
        return (np.ascontiguousarray(out.T).reshape(image.shape),)
