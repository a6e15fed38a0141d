"""
Bilinear sampling and planar rotation about the image center.
"""
import math
from typing import Optional, Tuple

import numpy as np

from .autodiff import BilinearSample, Rot90, Tensor, as_tensor
from .exceptions import ContractError, DimensionError

LATTICE_TOLERANCE = 1e-12


def quarter_turns(angle: float) -> Optional[int]:
    """Number of quarter turns if `angle` is a multiple of pi/2, else None."""
    q = angle / (math.pi / 2)
    nearest = round(q)
    if abs(q - nearest) <= LATTICE_TOLERANCE * max(1.0, abs(q)):
        return int(nearest) % 4
    return None


def cos_sin(angle: float) -> Tuple[float, float]:
    """cos/sin that are exactly 0 or +-1 on quarter turns."""
    q = quarter_turns(angle)
    if q is not None:
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[q]
    return math.cos(angle), math.sin(angle)


def bilinear_sample(image, coords) -> Tensor:
    """
    image [..., H, W], coords [N, 2] as (row, col) -> Tensor [..., N].
    """
    image = as_tensor(image)
    coords = np.asarray(coords, dtype=np.float64)
    if image.ndim < 2:
        raise DimensionError(f"image needs at least two axes, got shape {image.shape}")
    if image.shape[-1] < 2 or image.shape[-2] < 2:
        raise DimensionError(f"image must be at least 2x2, got {image.shape[-2:]}")
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DimensionError(f"coords must be [N, 2], got {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise ContractError("coords must be finite")
    return BilinearSample.apply(image, coords=coords)


def rotation_grid(height: int, width: int, angle: float) -> np.ndarray:
    """
    Source coordinates for every output pixel of a rotation by `angle`:
    src = R(-angle) (p - c) + c, flattened row-major to [H*W, 2].
    """
    cos, sin = cos_sin(angle)
    cr, cc = (height - 1) / 2.0, (width - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(height, dtype=np.float64) - cr,
                             np.arange(width, dtype=np.float64) - cc, indexing='ij')
    src_r = cos * rows + sin * cols + cr
    src_c = -sin * rows + cos * cols + cc
    return np.stack([src_r.ravel(), src_c.ravel()], axis=1)


def rotate_plane(x, angle: float) -> Tensor:
    """
    Rotate the last two axes of `x` counter-clockwise by `angle` radians.

    Quarter turns of square images are exact index permutations; every other
    angle is resampled bilinearly with zero fill outside the image.
    """
    x = as_tensor(x)
    if not math.isfinite(angle):
        raise ContractError(f"angle must be finite, got {angle}")
    if x.ndim < 2:
        raise DimensionError(f"rotate_plane needs at least two axes, got shape {x.shape}")
    h, w = x.shape[-2:]
    q = quarter_turns(angle)
    if q == 0 or (h, w) == (1, 1):
        return x
    if q is not None and h == w:
        return Rot90.apply(x, quarters=q)
    sampled = bilinear_sample(x, rotation_grid(h, w, angle))
    return sampled.reshape(x.shape)
