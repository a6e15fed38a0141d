"""
Rotation-steerable filters, lifting and group convolutions, group pooling and
the parameter-count arithmetic used to match plain CNN budgets.

Filters are linear combinations of circular harmonics. A rotated copy of a
filter is obtained by evaluating the harmonics at rotated coordinates, so no
filter is ever raster-resampled.
"""
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, as_tensor
from .exceptions import ContractError, DimensionError
from .functional import conv2d, global_max
from .groups import CyclicRotationGroup, RegularFeatureMap, act_on_plane
from .sampling import cos_sin

logger = logging.getLogger(__name__)

RING_SIGMA = 0.6
VANISHING_NORM = 1e-8


@dataclass(frozen=True)
class Harmonic:
    ring: int
    frequency: int
    kind: str  # 'cos' | 'sin'


def _offsets(k: int) -> Tuple[np.ndarray, np.ndarray]:
    r = (k - 1) / 2.0
    a, b = np.meshgrid(np.arange(k, dtype=np.float64) - r, np.arange(k, dtype=np.float64) - r, indexing='ij')
    return a, b


def _harmonic(h: Harmonic, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    radius = np.hypot(a, b)
    profile = np.exp(-((radius - h.ring) ** 2) / (2 * RING_SIGMA ** 2))
    if h.frequency == 0:
        return profile
    phi = np.arctan2(b, a)
    wave = np.cos(h.frequency * phi) if h.kind == 'cos' else np.sin(h.frequency * phi)
    return np.where(radius == 0, 0.0, wave * profile)


def _enumerate_harmonics(k: int, count: int) -> Tuple[List[Harmonic], np.ndarray]:
    """First `count` non-vanishing harmonics, ring-major, on the k x k grid."""
    a, b = _offsets(k)
    chosen, norms = [], []
    max_ring = k + count
    for ring in range(max_ring + 1):
        candidates = [Harmonic(ring, 0, 'cos')]
        for m in range(1, 2 * ring + 1):
            candidates += [Harmonic(ring, m, 'cos'), Harmonic(ring, m, 'sin')]
        for h in candidates:
            norm = np.linalg.norm(_harmonic(h, a, b))
            if norm < VANISHING_NORM:
                continue
            chosen.append(h)
            norms.append(norm)
            if len(chosen) == count:
                return chosen, np.asarray(norms)
    raise ContractError(f"could not find {count} non-vanishing harmonics on a {k}x{k} grid")


@dataclass
class SteerableBasis:
    kernel_size: int
    n_f: int
    group: CyclicRotationGroup
    harmonics: List[Harmonic]
    norms: np.ndarray
    filters: np.ndarray = field(repr=False)  # [n_alpha, 2*n_F, k, k]

    @property
    def size(self) -> int:
        return 2 * self.n_f

    def rotated(self, angle: float) -> np.ndarray:
        """Basis sampled after a rotation by `angle`: psi(R(-angle) p), [2*n_F, k, k]."""
        a, b = _offsets(self.kernel_size)
        cos, sin = cos_sin(angle)
        ra = cos * a + sin * b + 0.0
        rb = -sin * a + cos * b + 0.0
        return np.stack([_harmonic(h, ra, rb) / n for h, n in zip(self.harmonics, self.norms)])

    def index_of(self, ring: int, frequency: int, kind: str = 'cos') -> int:
        return self.harmonics.index(Harmonic(ring, frequency, kind))


def build_basis(k: int, n_f: int, n_alpha: int) -> SteerableBasis:
    """Circular-harmonic basis with 2*n_F unit-norm channels, precomputed at every group angle."""
    if k < 1 or k % 2 == 0:
        raise ContractError(f"kernel size must be odd, got {k}")
    if n_f < 1 or n_alpha < 1:
        raise ContractError(f"n_F and n_alpha must be >= 1, got {n_f} and {n_alpha}")
    group = CyclicRotationGroup(n_alpha)
    harmonics, norms = _enumerate_harmonics(k, 2 * n_f)
    basis = SteerableBasis(k, n_f, group, harmonics, norms, filters=np.empty(0))
    basis.filters = np.stack([basis.rotated(_group_angle(group, g)) for g in range(n_alpha)])
    return basis


def _group_angle(group: CyclicRotationGroup, g: int) -> float:
    if (4 * g) % group.order == 0:
        return (4 * g // group.order) * math.pi / 2
    return group.angle(g)


@dataclass
class SteerableFilter:
    """
    Expansion coefficients over a steerable basis.

    Lifting filters are [C_o, C_i, 2n_F]; group filters carry one coefficient
    set per input group channel, [C_o, C_i, n_alpha, 2n_F].
    """
    coefficients: Parameter

    @property
    def is_group(self) -> bool:
        return self.coefficients.ndim == 4

    @classmethod
    def create(cls, name: str, c_in: int, c_out: int, basis: SteerableBasis,
               rng: np.random.Generator, group_input: bool = False, dtype=None) -> 'SteerableFilter':
        fan_in = c_in * basis.size * (basis.group.order if group_input else 1)
        shape = (c_out, c_in, basis.group.order, basis.size) if group_input else (c_out, c_in, basis.size)
        data = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(dtype or ad.get_default_dtype())
        return cls(Parameter(name, data, regularization='elastic-net'))

    def check(self, basis: SteerableBasis):
        if self.coefficients.shape[-1] != basis.size:
            raise ContractError(
                f"filter has {self.coefficients.shape[-1]} coefficients per pair, basis has {basis.size}")
        if self.is_group and self.coefficients.shape[2] != basis.group.order:
            raise ContractError(
                f"filter spans {self.coefficients.shape[2]} group channels, basis group has {basis.group.order}")


def _basis_tensor(basis: SteerableBasis, dtype) -> np.ndarray:
    return basis.filters.astype(dtype, copy=False)


def synthesize_lifting(f: SteerableFilter, basis: SteerableBasis) -> Tensor:
    """Rotated kernels stacked as [C_o * n, C_i, k, k] (C_o major)."""
    f.check(basis)
    coeff = f.coefficients
    c_o, c_i, nb = coeff.shape
    n, k = basis.group.order, basis.kernel_size
    b = _basis_tensor(basis, coeff.dtype).transpose(1, 0, 2, 3).reshape(nb, n * k * k)
    w = (coeff.reshape(c_o * c_i, nb) @ b).reshape(c_o, c_i, n, k, k)
    return w.transpose(0, 2, 1, 3, 4).reshape(c_o * n, c_i, k, k)


def synthesize_group(f: SteerableFilter, basis: SteerableBasis) -> Tensor:
    """
    Kernels for group convolution as [C_o * n, C_i * n, k, k]:
    W[o, g, i, h] = rot_g(psi[o, i, (h - g) mod n]).
    """
    f.check(basis)
    coeff = f.coefficients
    c_o, c_i, n, nb = coeff.shape
    k = basis.kernel_size
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n  # [g, h]
    shifted = coeff[:, :, idx, :]  # [C_o, C_i, g, h, nb]
    shifted = shifted.transpose(2, 0, 1, 3, 4).reshape(n, c_o * c_i * n, nb)
    b = _basis_tensor(basis, coeff.dtype).reshape(n, nb, k * k)
    w = (shifted @ b).reshape(n, c_o, c_i, n, k, k)
    return w.transpose(1, 0, 2, 3, 4, 5).reshape(c_o * n, c_i * n, k, k)


def _batched(x: Tensor, rank: int) -> Tuple[Tensor, bool]:
    if x.ndim == rank - 1:
        return x.reshape((1,) + x.shape), True
    if x.ndim != rank:
        raise DimensionError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


def lifting_conv(x, f: SteerableFilter, basis: SteerableBasis, bias=None) -> RegularFeatureMap:
    """x [(B,) C_i, H, W] -> regular map [(B,) C_o, n, H, W]; channel g sees the filter rotated by g."""
    if f.is_group:
        raise ContractError("lifting_conv needs a lifting filter, got a group filter")
    x, unbatched = _batched(as_tensor(x), 4)
    weight = synthesize_lifting(f, basis)
    out = conv2d(x, weight)
    c_o, n = f.coefficients.shape[0], basis.group.order
    out = out.reshape(out.shape[0], c_o, n, out.shape[2], out.shape[3])
    if bias is not None:
        out = out + as_tensor(bias).reshape(c_o, 1, 1, 1)
    if unbatched:
        out = out.reshape(out.shape[1:])
    return RegularFeatureMap(out, basis.group)


def group_conv(fmap: RegularFeatureMap, f: SteerableFilter, basis: SteerableBasis, bias=None) -> RegularFeatureMap:
    """Discrete group convolution of a regular map with a steerable group filter."""
    if fmap.group != basis.group:
        raise ContractError(f"feature map group C_{fmap.group.order} differs from basis group C_{basis.group.order}")
    if not f.is_group:
        raise ContractError("group_conv needs a group filter")
    x, unbatched = _batched(fmap.data, 5)
    b, c_i, n, h, w = x.shape
    if c_i != f.coefficients.shape[1]:
        raise DimensionError(f"group_conv expects {f.coefficients.shape[1]} input channels, got {c_i}")
    weight = synthesize_group(f, basis)
    out = conv2d(x.reshape(b, c_i * n, h, w), weight)
    c_o = f.coefficients.shape[0]
    out = out.reshape(b, c_o, n, out.shape[2], out.shape[3])
    if bias is not None:
        out = out + as_tensor(bias).reshape(c_o, 1, 1, 1)
    if unbatched:
        out = out.reshape(out.shape[1:])
    return RegularFeatureMap(out, fmap.group)


def kernel_lifting_conv(x, kernel, group: CyclicRotationGroup) -> RegularFeatureMap:
    """Lifting convolution with a raw kernel [C_o, C_i, k, k] rotated by act_on_plane per element."""
    x, unbatched = _batched(as_tensor(x), 4)
    kernel = as_tensor(kernel)
    c_o, c_i, k, _ = kernel.shape
    rotated = ad.stack([act_on_plane(group, g, kernel) for g in group.elements], axis=1)
    out = conv2d(x, rotated.reshape(c_o * group.order, c_i, k, k))
    out = out.reshape(out.shape[0], c_o, group.order, out.shape[2], out.shape[3])
    if unbatched:
        out = out.reshape(out.shape[1:])
    return RegularFeatureMap(out, group)


def group_max_pool(fmap: RegularFeatureMap) -> Tensor:
    """Elementwise max over the group axis: [..., C, n, H, W] -> [..., C, H, W]."""
    return fmap.data.max(axis=fmap.data.ndim - 3)


def spatial_max_pool(x) -> Tensor:
    """Global max per channel: [..., C, H, W] -> [..., C]."""
    return global_max(x, axes=2)


@dataclass(frozen=True)
class ParamRatio:
    ratio: Fraction
    channel_factor: float
    exact_factor: Optional[Fraction]


def _rational_sqrt(value: Fraction) -> Optional[Fraction]:
    num, den = math.isqrt(value.numerator), math.isqrt(value.denominator)
    if num * num == value.numerator and den * den == value.denominator:
        return Fraction(num, den)
    return None


def param_ratio(k: int, n_alpha: int, n_f: int, lifting: bool = False) -> ParamRatio:
    """
    Steerable over plain parameter ratio 2*n_F*n_alpha/k^2 and the per-channel
    factor sqrt(ratio). Lifting layers do not reuse the filter over rotations,
    so n_alpha drops out.
    """
    if min(k, n_alpha, n_f) < 1:
        raise ContractError(f"k, n_alpha and n_F must be >= 1, got {k}, {n_alpha}, {n_f}")
    ratio = Fraction(2 * n_f * (1 if lifting else n_alpha), k * k)
    exact = _rational_sqrt(ratio)
    factor = float(exact) if exact is not None else math.sqrt(ratio)
    return ParamRatio(ratio, factor, exact)


def rescaled_channels(channels: int, factor: float) -> int:
    """Nearest integer channel count, never below one."""
    return max(1, int(round(channels / factor)))
