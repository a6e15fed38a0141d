"""Neural-network kernels built on the autodiff functions."""
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .exceptions import ContractError, DimensionError


def matmul(a, b) -> Tensor:
    return ad.Matmul.apply(a, b)


def relu(x) -> Tensor:
    return ad.Relu.apply(x)


def softmax(x, axis: int = -1) -> Tensor:
    return ad.Softmax.apply(x, axis=axis)


def log_softmax(x, axis: int = -1) -> Tensor:
    return ad.LogSoftmax.apply(x, axis=axis)


def dense(x, weight, bias=None) -> Tensor:
    """x [..., in] @ weight [in, out] (+ bias [out])."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"dense expects {weight.shape[0]} input features, got {x.shape[-1]}")
    if x.ndim == 1:
        out = matmul(x.reshape(1, -1), weight).reshape(weight.shape[1])
    else:
        out = matmul(x, weight)
    return out if bias is None else out + bias


def dropout(x, rate: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-rate) while training, identity otherwise."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an explicit generator")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
    return ad.MaskedScale.apply(x, mask=mask)


def conv2d(x, weight, stride: int = 1, padding: Union[int, str] = 'same') -> Tensor:
    """
    Cross-correlation of x [B, Ci, H, W] (or [Ci, H, W]) with weight [Co, Ci, k, k].

    `padding='same'` pads (k-1)/2 zeros on each side and needs an odd kernel.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    unbatched = x.ndim == 3
    if unbatched:
        x = x.reshape((1,) + x.shape)
    if padding == 'same':
        k = weight.shape[-1]
        if k % 2 == 0 or weight.shape[-2] != k:
            raise DimensionError(f"same padding needs a square odd kernel, got {weight.shape[-2:]}")
        padding = (k - 1) // 2
    out = ad.Conv2d.apply(x, weight, stride=stride, pad=int(padding))
    return out.reshape(out.shape[1:]) if unbatched else out


def max_pool2d(x, size: int = 2) -> Tensor:
    """Non-overlapping max pooling of the last two axes; trailing rows/cols are dropped."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise DimensionError(f"cannot pool {h}x{w} with window {size}")
    lead = x.shape[:-2]
    cropped = x if (ho * size, wo * size) == (h, w) else x[..., :ho * size, :wo * size]
    blocks = cropped.reshape(lead + (ho, size, wo, size))
    n = len(lead)
    blocks = blocks.transpose(tuple(range(n)) + (n, n + 2, n + 1, n + 3))
    return blocks.reshape(lead + (ho, wo, size * size)).max(axis=-1)


def global_max(x, axes: int = 2) -> Tensor:
    """Max over the trailing `axes` axes."""
    x = as_tensor(x)
    lead = x.shape[:-axes]
    return x.reshape(lead + (-1,)).max(axis=-1)


def cross_entropy(logits, labels, reduction: str = 'mean') -> Tensor:
    """Softmax cross-entropy of logits [B, K] against integer labels [B]."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} do not match")
    picked = log_softmax(logits, axis=-1)[np.arange(labels.shape[0]), labels]
    if reduction == 'sum':
        return -picked.sum()
    if reduction == 'mean':
        return -picked.mean()
    raise ContractError(f"unknown reduction {reduction!r}")


def batch_norm(x, gamma, beta, axis: int = 1, eps: float = 1e-5):
    """
    Normalize over every axis except `axis` using batch statistics.
    Returns the output and the batch mean/variance as arrays.
    """
    x = as_tensor(x)
    axes = tuple(a for a in range(x.ndim) if a != axis % x.ndim)
    shape = [1] * x.ndim
    shape[axis] = x.shape[axis]
    mean = x.mean(axis=axes, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    out = centered * (var + eps) ** -0.5
    return (out * as_tensor(gamma).reshape(shape) + as_tensor(beta).reshape(shape),
            mean.data.reshape(-1), var.data.reshape(-1))
