"""
Invariant-integration heads.

Every head maps a planar feature map [B, C, H, W] (the output of group
pooling) to rotation-invariant features by averaging a function over the
group and over space. `head(x, group)` returns the head's native output;
`head.features(x, group)` returns the flat [B, F] vector the dense layers
consume.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, as_tensor
from .exceptions import ContractError, DimensionError, DomainError
from .functional import dense, dropout, global_max, relu, softmax
from .groups import CyclicRotationGroup, act_on_plane, group_average
from .sampling import LATTICE_TOLERANCE, bilinear_sample
from .steerable import kernel_lifting_conv

logger = logging.getLogger(__name__)

RESIDUAL_EPS = 1e-8
HEAD_KINDS = ('monomial', 'ws-global', 'ws-local', 'mlp', 'sa', 'spatial-max')


def _batched(x) -> Tuple[Tensor, bool]:
    x = as_tensor(x)
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"heads take [C, H, W] or [B, C, H, W], got shape {x.shape}")
    return x, False


def _he(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(ad.get_default_dtype())


class InvariantHead:
    kind = ''

    def __call__(self, x, group: CyclicRotationGroup) -> Tensor:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def features(self, x, group: CyclicRotationGroup, train: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
        return self(x, group)

    def output_features(self, channels: int) -> int:
        raise NotImplementedError(f"{type(self).__name__} does not report its width")

    def parameters(self) -> List[Parameter]:
        return []

    def describe(self) -> Dict:
        return {'kind': self.kind}


# --------------------------------------------------------------------------
# monomials
# --------------------------------------------------------------------------
@dataclass
class MonomialSpec:
    distances: Tuple[float, ...]
    exponents: Tuple[float, ...]
    origin: int = 0
    score: Optional[float] = None

    def __post_init__(self):
        self.distances = tuple(float(d) for d in self.distances)
        self.exponents = tuple(float(b) for b in self.exponents)
        if not self.distances or self.distances[0] != 0.0:
            raise ContractError(f"first monomial distance must be 0, got {self.distances}")
        if any(d < 0 for d in self.distances):
            raise ContractError(f"monomial distances must be non-negative, got {self.distances}")
        if len(self.exponents) != len(self.distances):
            raise ContractError(
                f"monomial has {len(self.distances)} distances but {len(self.exponents)} exponents")

    @property
    def factors(self) -> int:
        return len(self.distances)

    def as_dict(self) -> Dict:
        return {'distances': list(self.distances), 'exponents': list(self.exponents),
                'origin': self.origin, 'score': self.score}


class MonomialIIHead(InvariantHead):
    """
    A[m](x) = mean over (phi, u, v) of prod_i x[u + cos(phi) d_i, v + sin(phi) d_i] ** b_i,
    applied to every channel separately. Output is channel-major: feature
    c * n_m + j is monomial j on channel c.

    Centers are restricted to the valid region ceil(max d) pixels away from the
    border, so no padded zero ever enters a product.
    """
    kind = 'monomial'

    def __init__(self, specs: Sequence[MonomialSpec], positivity: str = 'shift', name: str = 'head.exponents'):
        if not specs:
            raise ContractError("monomial head needs at least one monomial")
        factors = {s.factors for s in specs}
        if len(factors) != 1:
            raise ContractError(f"every monomial needs the same factor count, got {sorted(factors)}")
        if positivity not in ('shift', 'none'):
            raise ContractError(f"unknown positivity policy {positivity!r}")
        self.positivity = positivity
        self.distances = np.array([s.distances for s in specs], dtype=np.float64)
        self.origins = [s.origin for s in specs]
        self.scores = [s.score for s in specs]
        self.exponents = Parameter(name, np.array([s.exponents for s in specs], dtype=ad.get_default_dtype()))
        self.margin = int(math.ceil(self.distances.max() - LATTICE_TOLERANCE))
        self.unique = sorted(set(self.distances.ravel().tolist()))
        onehot = np.zeros(self.distances.shape + (len(self.unique),))
        for d_index, d in enumerate(self.unique):
            onehot[..., d_index] = self.distances == d
        self.onehot = onehot

    @property
    def count(self) -> int:
        return self.distances.shape[0]

    @property
    def factors(self) -> int:
        return self.distances.shape[1]

    def output_features(self, channels: int) -> int:
        return channels * self.count

    def parameters(self) -> List[Parameter]:
        return [self.exponents]

    def specs(self) -> List[MonomialSpec]:
        return [MonomialSpec(tuple(d), tuple(b), origin, score)
                for d, b, origin, score in zip(self.distances.tolist(), self.exponents.data.tolist(),
                                               self.origins, self.scores)]

    def describe(self) -> Dict:
        return {'kind': self.kind, 'positivity': self.positivity,
                'monomials': [s.as_dict() for s in self.specs()]}

    def keep(self, indices: Sequence[int]) -> 'MonomialIIHead':
        """Head restricted to `indices`; surviving exponents are copied, not re-initialized."""
        specs = self.specs()
        head = MonomialIIHead([specs[i] for i in indices], self.positivity, self.exponents.name)
        head.exponents.data = self.exponents.data[list(indices)].copy()
        return head

    def exponent_drift(self, group: CyclicRotationGroup) -> float:
        """How far the largest exponent sum exceeds |G| (0 when within bounds)."""
        excess = float(self.exponents.data.sum(axis=1).max()) - group.order
        if excess > 0:
            logger.info("monomial exponent sum exceeds |G|=%d by %.4f", group.order, excess)
        return max(0.0, excess)

    def _positive(self, x: Tensor) -> Tensor:
        if self.positivity == 'shift':
            b, c = x.shape[:2]
            lowest = x.reshape(b, c, -1).min(axis=-1).reshape(b, c, 1, 1)
            return x - lowest + 1.0
        if np.any(x.data <= 0):
            raise DomainError("monomials need strictly positive inputs; enable the 'shift' positivity policy")
        return x

    def _samples(self, x: Tensor, d: float, cos: float, sin: float) -> Tensor:
        b, c, h, w = x.shape
        m = self.margin
        u, v = h - 2 * m, w - 2 * m
        dr, dc = cos * d, sin * d
        if abs(dr - round(dr)) <= LATTICE_TOLERANCE and abs(dc - round(dc)) <= LATTICE_TOLERANCE:
            r0, c0 = m + int(round(dr)), m + int(round(dc))
            return x[:, :, r0:r0 + u, c0:c0 + v].reshape(b, c, u * v)
        rows, cols = np.meshgrid(np.arange(m, m + u, dtype=np.float64) + dr,
                                 np.arange(m, m + v, dtype=np.float64) + dc, indexing='ij')
        return bilinear_sample(x, np.stack([rows.ravel(), cols.ravel()], axis=1))

    def __call__(self, x, group: CyclicRotationGroup) -> Tensor:
        x, unbatched = _batched(x)
        b, c, h, w = x.shape
        if h - 2 * self.margin < 1 or w - 2 * self.margin < 1:
            raise DimensionError(f"{h}x{w} input leaves no valid center for monomial distance {self.margin}")
        x = self._positive(x)
        per_angle = []
        for g in group.elements:
            cos, sin = group.cos_sin(g)
            per_angle.append(ad.stack([self._samples(x, d, cos, sin) for d in self.unique], axis=-1))
        logs = ad.stack(per_angle, axis=0).log()  # [phi, B, C, UV, n_d]
        onehot = self.onehot.astype(self.exponents.dtype)
        weights = (self.exponents.reshape(self.count, self.factors, 1) * onehot).sum(axis=1)
        values = (logs @ weights.transpose(1, 0)).exp()  # [phi, B, C, UV, n_m]
        out = values.mean(axis=(0, 3)).reshape(b, c * self.count)
        return out.reshape(out.shape[1:]) if unbatched else out


# --------------------------------------------------------------------------
# weighted sum
# --------------------------------------------------------------------------
class WSIIHead(InvariantHead):
    """
    A[WS](x) = 1/|G| sum_g sum_y x(y) psi(g^-1 y).

    `global` uses one kernel as large as the input; `local` evaluates the
    same double sum at every position with a k x k kernel and averages over
    space, which equals group-and-space average pooling after a lifting
    convolution with psi.
    """

    def __init__(self, kernel: Parameter, mode: str = 'local'):
        if mode not in ('global', 'local'):
            raise ContractError(f"WS mode must be 'global' or 'local', got {mode!r}")
        if kernel.ndim != 4:
            raise DimensionError(f"WS kernel must be [C_o, C_i, kh, kw], got {kernel.shape}")
        self.kernel = kernel
        self.mode = mode
        self.kind = f"ws-{mode}"

    @classmethod
    def create(cls, c_in: int, c_out: int, extent: Tuple[int, int], mode: str,
               rng: np.random.Generator, name: str = 'head.kernel') -> 'WSIIHead':
        shape = (c_out, c_in) + tuple(extent)
        return cls(Parameter(name, _he(rng, shape, c_in * extent[0] * extent[1]), 'l2'), mode)

    def output_features(self, channels: int) -> int:
        return self.kernel.shape[0]

    def parameters(self) -> List[Parameter]:
        return [self.kernel]

    def describe(self) -> Dict:
        return {'kind': self.kind, 'extent': list(self.kernel.shape[2:])}

    def averaged_kernel(self, group: CyclicRotationGroup) -> Tensor:
        return group_average(ad.stack([act_on_plane(group, g, self.kernel) for g in group.elements]), group)

    def __call__(self, x, group: CyclicRotationGroup) -> Tensor:
        x, unbatched = _batched(x)
        c_o, c_i, kh, kw = self.kernel.shape
        b, c, h, w = x.shape
        if c != c_i:
            raise DimensionError(f"WS head expects {c_i} channels, got {c}")
        psi = self.averaged_kernel(group).reshape(c_o, c_i * kh * kw)
        if self.mode == 'global':
            if (kh, kw) != (h, w):
                raise DimensionError(f"global WS kernel extent {(kh, kw)} must equal input extent {(h, w)}")
            window_means = x.reshape(b, c_i * h * w)
        else:
            window_means = local_window_means(x, kh).reshape(b, c_i * kh * kw)
        out = window_means @ psi.transpose(1, 0)
        return out.reshape(out.shape[1:]) if unbatched else out


def local_window_means(x: Tensor, k: int) -> Tensor:
    """
    S[b, i, s, t] = mean over (u, v) of the zero-padded input at (u + s, v + t),
    so that the spatial mean of a same-padded conv2d is sum(psi * S).
    """
    if k % 2 == 0:
        raise DimensionError(f"local WS kernel must be odd, got {k}")
    pad = (k - 1) // 2
    h, w = x.shape[-2:]
    padded = ad.Pad.apply(x, pad=pad)
    means = [padded[..., s:s + h, t:t + w].mean(axis=(-2, -1)) for s in range(k) for t in range(k)]
    stacked = ad.stack(means, axis=-1)
    return stacked.reshape(x.shape[:-2] + (k, k))


def ws_groupconv_equivalence(x, kernel, group: CyclicRotationGroup) -> float:
    """
    Max |local WS(x) - avgpool over (G, space) of lifting_conv(x, psi)|,
    with the lifting convolution computed directly from the rotated kernels.
    """
    x, _ = _batched(x)
    kernel = as_tensor(kernel)
    head = WSIIHead(Parameter('psi', kernel.data), 'local')
    direct = head(x, group).data
    lifted = kernel_lifting_conv(x, kernel, group).data.data
    pooled = lifted.mean(axis=(2, 3, 4))
    return float(np.max(np.abs(direct - pooled)))


# --------------------------------------------------------------------------
# multilayer perceptron
# --------------------------------------------------------------------------
class MLPIIHead(InvariantHead):
    """
    A[MLP](x) = mean over (u, v, phi) of sigma(W_l ... sigma(W_1 x_N(u, v, phi))),
    where x_N(u, v, phi) is the patch around (u, v) read along axes rotated
    by phi (zero outside the image).
    """
    kind = 'mlp'

    def __init__(self, weights: Sequence[Parameter], biases: Sequence[Optional[Parameter]],
                 patch: int, final_activation: bool = True):
        if patch < 1 or patch % 2 == 0:
            raise ContractError(f"MLP patch extent must be odd, got {patch}")
        if not weights:
            raise ContractError("MLP head needs at least one layer")
        self.weights = list(weights)
        self.biases = list(biases)
        self.patch = patch
        self.final_activation = final_activation

    @classmethod
    def create(cls, c_in: int, widths: Sequence[int], patch: int, rng: np.random.Generator,
               bias: bool = True, final_activation: bool = True) -> 'MLPIIHead':
        sizes = [c_in * patch * patch] + list(widths)
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            weights.append(Parameter(f"head.mlp.{i}.weight", _he(rng, (fan_in, fan_out), fan_in), 'l2'))
            biases.append(Parameter(f"head.mlp.{i}.bias", np.zeros(fan_out, dtype=ad.get_default_dtype()))
                          if bias else None)
        return cls(weights, biases, patch, final_activation)

    def output_features(self, channels: int) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> List[Parameter]:
        return self.weights + [b for b in self.biases if b is not None]

    def describe(self) -> Dict:
        return {'kind': self.kind, 'patch': self.patch, 'widths': [w.shape[1] for w in self.weights],
                'bias': self.biases[0] is not None, 'final_activation': self.final_activation}

    def _patches(self, x: Tensor, cos: float, sin: float) -> Tensor:
        b, c, h, w = x.shape
        r = (self.patch - 1) // 2
        tr, tc = np.meshgrid(np.arange(-r, r + 1, dtype=np.float64), np.arange(-r, r + 1, dtype=np.float64),
                             indexing='ij')
        off_r = (cos * tr - sin * tc).ravel()
        off_c = (sin * tr + cos * tc).ravel()
        ur, uc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing='ij')
        rows = (ur.reshape(-1, 1) + off_r[None, :]).ravel()
        cols = (uc.reshape(-1, 1) + off_c[None, :]).ravel()
        sampled = bilinear_sample(x, np.stack([rows, cols], axis=1))  # [B, C, HW * p^2]
        p2 = self.patch * self.patch
        return sampled.reshape(b, c, h * w, p2).transpose(0, 2, 1, 3).reshape(b, h * w, c * p2)

    def _mlp(self, z: Tensor) -> Tensor:
        last = len(self.weights) - 1
        for i, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            z = dense(z, weight, bias)
            if i < last or self.final_activation:
                z = relu(z)
        return z

    def __call__(self, x, group: CyclicRotationGroup) -> Tensor:
        x, unbatched = _batched(x)
        if x.shape[1] * self.patch * self.patch != self.weights[0].shape[0]:
            raise DimensionError(
                f"MLP head expects {self.weights[0].shape[0]} patch values, got {x.shape[1]}x{self.patch}^2")
        outputs = [self._mlp(self._patches(x, *group.cos_sin(g))) for g in group.elements]
        out = ad.stack(outputs, axis=0).mean(axis=(0, 2))
        return out.reshape(out.shape[1:]) if unbatched else out


# --------------------------------------------------------------------------
# self-attention
# --------------------------------------------------------------------------
class SAIIHead(InvariantHead):
    """
    A[SA](x) = 1/|G| sum_g softmax(A(L_g x)) L_g x W_V.

    Attention logits are q_i . ((x_j + P[j - i]) W_K) / sqrt(C_h) with one
    learned input-space vector per relative offset. Tokens of the rotated
    input lie on the original grid, so every offset is an integer index into
    P. With more than one head the concatenated heads are mixed by W_o.
    """
    kind = 'sa'

    def __init__(self, wq: Parameter, wk: Parameter, wv: Parameter, encodings: Parameter,
                 wo: Optional[Parameter] = None, attention_dropout: float = 0.0):
        heads, c_in, c_h = wq.shape
        if wk.shape != wq.shape or wv.shape != wq.shape:
            raise DimensionError(f"W_Q, W_K, W_V must share a shape, got {wq.shape}, {wk.shape}, {wv.shape}")
        if encodings.ndim != 4 or encodings.shape[0] != heads or encodings.shape[3] != c_in:
            raise DimensionError(f"relative encodings must be [{heads}, 2H-1, 2W-1, {c_in}], got {encodings.shape}")
        if heads > 1 and wo is None:
            raise ContractError("multi-head attention needs an output projection")
        self.wq, self.wk, self.wv, self.encodings, self.wo = wq, wk, wv, encodings, wo
        self.heads, self.c_in, self.c_head = heads, c_in, c_h
        self.height = (encodings.shape[1] + 1) // 2
        self.width = (encodings.shape[2] + 1) // 2
        self.attention_dropout = attention_dropout

    @classmethod
    def create(cls, c_in: int, channels: int, heads: int, height: int, width: int,
               rng: np.random.Generator, out_channels: Optional[int] = None,
               attention_dropout: float = 0.0) -> 'SAIIHead':
        if heads < 1 or channels % heads:
            raise ContractError(f"{heads} heads do not divide {channels} attention channels")
        c_h = channels // heads
        shape = (heads, c_in, c_h)
        wq = Parameter('head.sa.wq', _he(rng, shape, c_in), 'l2')
        wk = Parameter('head.sa.wk', _he(rng, shape, c_in), 'l2')
        wv = Parameter('head.sa.wv', _he(rng, shape, c_in), 'l2')
        encodings = Parameter('head.sa.encodings', (0.02 * rng.standard_normal(
            (heads, 2 * height - 1, 2 * width - 1, c_in))).astype(ad.get_default_dtype()), 'l2')
        wo = None
        if heads > 1:
            c_out = out_channels or channels
            wo = Parameter('head.sa.wo', _he(rng, (channels, c_out), channels), 'l2')
        return cls(wq, wk, wv, encodings, wo, attention_dropout)

    def output_features(self, channels: int) -> int:
        return self.wo.shape[1] if self.wo is not None else self.c_head

    def parameters(self) -> List[Parameter]:
        params = [self.wq, self.wk, self.wv, self.encodings]
        return params + ([self.wo] if self.wo is not None else [])

    def describe(self) -> Dict:
        return {'kind': self.kind, 'heads': self.heads, 'channels': self.heads * self.c_head,
                'height': self.height, 'width': self.width, 'attention_dropout': self.attention_dropout}

    def _offset_index(self, h: int, w: int) -> Tuple[np.ndarray, np.ndarray]:
        rows, cols = np.divmod(np.arange(h * w), w)
        dr = rows[None, :] - rows[:, None] + self.height - 1
        dc = cols[None, :] - cols[:, None] + self.width - 1
        return dr, dc

    def _attention(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """Softmax attention [B, heads, N, N] and values [B, heads, N, C_h] of one (rotated) input."""
        b, c, h, w = x.shape
        if h > self.height or w > self.width:
            raise DimensionError(f"relative encodings cover {self.height}x{self.width}, input is {h}x{w}")
        n = h * w
        tokens = x.reshape(b, 1, c, n).transpose(0, 1, 3, 2)  # [B, 1, N, C]
        q = tokens @ self.wq  # [B, heads, N, C_h]
        k = tokens @ self.wk
        v = tokens @ self.wv
        dr, dc = self._offset_index(h, w)
        rel = self.encodings[:, dr, dc, :]  # [heads, N, N, C]
        rel_keys = rel @ self.wk.reshape(self.heads, 1, c, self.c_head)  # [heads, N, N, C_h]
        content = q @ k.transpose(0, 1, 3, 2)
        relative = (q.reshape(b, self.heads, n, 1, self.c_head) @ rel_keys.transpose(0, 1, 3, 2)).reshape(
            b, self.heads, n, n)
        logits = (content + relative) * (1.0 / math.sqrt(self.c_head))
        return softmax(logits, axis=-1), v

    def attention_rows(self, x, group: CyclicRotationGroup) -> List[np.ndarray]:
        x, _ = _batched(x)
        return [self._attention(act_on_plane(group, g, x))[0].data for g in group.elements]

    def forward(self, x, group: CyclicRotationGroup, train: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        x, unbatched = _batched(x)
        if x.shape[1] != self.c_in:
            raise DimensionError(f"SA head expects {self.c_in} channels, got {x.shape[1]}")
        outputs = []
        for g in group.elements:
            attention, values = self._attention(act_on_plane(group, g, x))
            if self.attention_dropout:
                attention = dropout(attention, self.attention_dropout, train, rng)
            mixed = attention @ values  # [B, heads, N, C_h]
            b, heads, n, c_h = mixed.shape
            mixed = mixed.transpose(0, 2, 1, 3).reshape(b, n, heads * c_h)
            outputs.append(mixed @ self.wo if self.wo is not None else mixed)
        out = group_average(ad.stack(outputs, axis=0), group)
        return out.reshape(out.shape[1:]) if unbatched else out

    def __call__(self, x, group: CyclicRotationGroup) -> Tensor:
        return self.forward(x, group)

    def features(self, x, group, train=False, rng=None) -> Tensor:
        out = self.forward(x, group, train, rng)
        return out.mean(axis=out.ndim - 2)


# --------------------------------------------------------------------------
# baseline
# --------------------------------------------------------------------------
class SpatialMaxHead(InvariantHead):
    """Global spatial max pooling, the pooling invariant integration replaces."""
    kind = 'spatial-max'

    def __call__(self, x, group: CyclicRotationGroup = None) -> Tensor:
        return global_max(x, axes=2)

    def output_features(self, channels: int) -> int:
        return channels


def invariance_residual(head: InvariantHead, x, group: CyclicRotationGroup, probe,
                        relative_to: str = 'feature') -> float:
    """max |head(L_probe x) - head(x)| over the head's features, relative to |head(x)|.

    ``relative_to='sample'`` divides by the largest |head(x)| of each sample instead of each feature,
    so features close to zero do not dominate interpolated rotations.
    """
    if relative_to not in ('feature', 'sample'):
        raise ValueError(f"relative_to must be 'feature' or 'sample', not {relative_to!r}")
    x = as_tensor(x)
    reference = head.features(x, group).data
    moved = head.features(act_on_plane(group, probe, x), group).data
    scale = np.abs(reference)
    if relative_to == 'sample':
        axes = tuple(range(1, scale.ndim)) if scale.ndim > 1 else None
        scale = np.max(scale, axis=axes, keepdims=True)
    return float(np.max(np.abs(moved - reference) / (scale + RESIDUAL_EPS)))
