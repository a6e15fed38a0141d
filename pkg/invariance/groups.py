"""
The cyclic rotation group C_n, its action on planar signals and on
regular-representation feature maps, and the normalized group average.
"""
import math
from dataclasses import dataclass
from typing import List, Union

import numpy as np

from .autodiff import Tensor, as_tensor
from .exceptions import ContractError, DimensionError
from .sampling import cos_sin, rotate_plane


@dataclass(frozen=True)
class Rotation:
    """Element k of C_order, i.e. a rotation by 2*pi*k/order."""
    index: int
    order: int

    @property
    def angle(self) -> float:
        return 2 * math.pi * self.index / self.order


@dataclass(frozen=True)
class CyclicRotationGroup:
    order: int

    def __post_init__(self):
        if not isinstance(self.order, (int, np.integer)) or self.order < 1:
            raise ContractError(f"group order must be a positive integer, got {self.order!r}")

    @property
    def elements(self) -> List[Rotation]:
        return [Rotation(k, self.order) for k in range(self.order)]

    @property
    def identity(self) -> Rotation:
        return Rotation(0, self.order)

    def element(self, g: Union[int, Rotation]) -> Rotation:
        if isinstance(g, Rotation):
            if g.order != self.order:
                raise ContractError(f"element of C_{g.order} used with C_{self.order}")
            return g
        return Rotation(int(g) % self.order, self.order)

    def compose(self, g, h) -> Rotation:
        return Rotation((self.element(g).index + self.element(h).index) % self.order, self.order)

    def inverse(self, g) -> Rotation:
        return Rotation((-self.element(g).index) % self.order, self.order)

    def angle(self, g) -> float:
        return self.element(g).angle

    def cos_sin(self, g):
        """Exact on quarter turns, see `sampling.cos_sin`."""
        k = self.element(g).index
        if (4 * k) % self.order == 0:
            return cos_sin((4 * k // self.order) * math.pi / 2)
        return cos_sin(self.angle(k))

    def composition_table(self) -> np.ndarray:
        idx = np.arange(self.order)
        return (idx[:, None] + idx[None, :]) % self.order

    def axiom_violations(self) -> int:
        """Count violations of closure, associativity, identity and inverse."""
        n = self.order
        table = self.composition_table()
        bad = int(np.sum((table < 0) | (table >= n)))
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    if table[table[a, b], c] != table[a, table[b, c]]:
                        bad += 1
        bad += int(np.sum(table[0, :] != np.arange(n))) + int(np.sum(table[:, 0] != np.arange(n)))
        for a in range(n):
            inv = self.inverse(a).index
            if table[a, inv] != 0 or table[inv, a] != 0:
                bad += 1
        return bad


@dataclass
class RegularFeatureMap:
    """Features laid out [..., C, n, H, W], one group channel per element."""
    data: Tensor
    group: CyclicRotationGroup

    def __post_init__(self):
        self.data = as_tensor(self.data)
        if self.data.ndim < 4 or self.data.shape[-3] != self.group.order:
            raise DimensionError(
                f"regular feature map needs group axis of size {self.group.order}, got shape {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[-4]


def act_on_plane(group: CyclicRotationGroup, g, x) -> Tensor:
    """Rotate the last two axes of `x` by the angle of g."""
    element = group.element(g)
    if element.index == 0:
        return as_tensor(x)
    if (4 * element.index) % group.order == 0:
        return rotate_plane(x, (4 * element.index // group.order) * math.pi / 2)
    return rotate_plane(x, element.angle)


def act_on_regular(g, f: RegularFeatureMap) -> RegularFeatureMap:
    """out[c, (k + g) mod n] = act_on_plane(g, f[c, k])."""
    element = f.group.element(g)
    if element.index == 0:
        return RegularFeatureMap(f.data, f.group)
    shifted = f.data.roll(element.index, axis=f.data.ndim - 3)
    return RegularFeatureMap(act_on_plane(f.group, element, shifted), f.group)


def group_average(values, group: CyclicRotationGroup = None) -> Tensor:
    """Uniform (Haar) mean over the leading group axis."""
    values = as_tensor(values)
    if group is not None and values.shape[0] != group.order:
        raise DimensionError(f"leading axis {values.shape[0]} does not match group order {group.order}")
    return values.mean(axis=0)


def orbit(group: CyclicRotationGroup, x) -> List[Tensor]:
    return [act_on_plane(group, g, x) for g in group.elements]
