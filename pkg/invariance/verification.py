"""
Property suites that certify the library numerically: group axioms,
equivariance of the convolutions, invariance of every head, the local
weighted-sum / group-convolution identity, gradients and the pruning scores.

Each suite is a list of independent checks. Checks run on a thread pool
(RINV_THREADS) but are reported in registration order, and every check draws
its randomness from its own seed stream, so reports do not depend on
scheduling.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from django.conf import settings

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .datasets import synth_shapes
from .exceptions import ConfigError, RinvError
from .functional import batch_norm, conv2d, cross_entropy, dense, dropout, max_pool2d
from .gradcheck import max_gradient_error, numeric_gradient, relative_error
from .groups import CyclicRotationGroup, RegularFeatureMap, act_on_plane, act_on_regular, group_average
from .heads import (MLPIIHead, MonomialIIHead, MonomialSpec, SAIIHead, SpatialMaxHead, WSIIHead,
                    invariance_residual,
                    ws_groupconv_equivalence)
from .network import HeadConfig, ModelConfig, build_model
from .sampling import bilinear_sample, rotate_plane
from .selection import connectivity_scores, magnitude_scores, rank
from .steerable import SteerableFilter, build_basis, group_conv, group_max_pool, lifting_conv
from .streams import CONSUMERS
from .training import model_invariance_residual

logger = logging.getLogger(__name__)

SUITES = ('group', 'equivariance', 'invariance', 'ws-identity', 'gradients', 'pruning')
GROUP_ORDERS = (1, 2, 4, 8, 16)
WS_ORDERS = (1, 4, 8)
WS_PAIRS = 50

TOLERANCES = {
    64: {'exact': 0.0, 'summation': 1e-12, 'interpolation': 1e-2, 'invariance': 1e-4, 'pipeline': 1e-3,
         'rotated-invariance': 5e-2, 'softmax': 1e-6, 'ws-identity': 1e-6, 'gradient': 1e-4, 'score': 1e-12,
         'sensitivity': 1e-3},
    32: {'exact': 0.0, 'summation': 1e-4, 'interpolation': 1e-2, 'invariance': 1e-3, 'pipeline': 1e-2,
         'rotated-invariance': 5e-2, 'softmax': 1e-6, 'ws-identity': 1e-5, 'gradient': 5e-2, 'score': 1e-6,
         'sensitivity': 5e-2},
}
GRADIENT_STEPS = {64: 1e-5, 32: 1e-2}

# full turn in 22.5 degree steps; each bilinear pass blurs by at most |laplacian| / 8
DRIFT_STEPS = 16
DRIFT_SIZE = 193
DRIFT_SIGMA = 24.0

# heads under a non-quarter rotation: smooth input that vanishes before the border
ROTATED_SIZE = 35
ROTATED_SIGMA = 4.5


@dataclass
class VerifyConfig:
    suite: str = 'all'
    n_alpha: int = 4
    precision: int = 64
    samples: int = 20
    seed: int = 0

    def suites(self) -> Tuple[str, ...]:
        return SUITES if self.suite == 'all' else (self.suite,)


@dataclass(frozen=True)
class Check:
    name: str
    measure: Callable[[np.random.Generator], float]
    tolerance: str  # key into TOLERANCES


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    residual: float
    tolerance: float
    detail: str = ''

    @property
    def passed(self) -> bool:
        return math.isfinite(self.residual) and self.residual <= self.tolerance

    def line(self) -> str:
        status = 'PASS' if self.passed else 'FAIL'
        text = f"{status} {self.suite}/{self.name}: residual {self.residual:.3e} (tolerance {self.tolerance:.0e})"
        return f"{text}: {self.detail}" if self.detail else text


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------
def _normal(rng: np.random.Generator, *shape) -> np.ndarray:
    return rng.standard_normal(shape).astype(ad.get_default_dtype())


def _positive(rng: np.random.Generator, *shape) -> np.ndarray:
    return rng.uniform(0.5, 2.0, size=shape).astype(ad.get_default_dtype())


def smooth_image(rng: np.random.Generator, size: int, channels: int = 1, sigma: float = 6.0,
                 blobs: int = 3, spread: Optional[float] = None) -> np.ndarray:
    """Sum of wide Gaussian blobs within `spread` (default size / 8) of the center, peak normalized to one."""
    half = (size - 1) / 2.0
    spread = size / 8 if spread is None else spread
    rows, cols = np.meshgrid(np.arange(size) - half, np.arange(size) - half, indexing='ij')
    image = np.zeros((channels, size, size))
    for c in range(channels):
        for _ in range(blobs):
            r0, c0 = rng.uniform(-spread, spread, size=2)
            image[c] += rng.uniform(0.5, 1.0) * np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / (2 * sigma ** 2))
    return (image / image.max()).astype(ad.get_default_dtype())


def drift_blob(rng: np.random.Generator) -> np.ndarray:
    """
    One near-centered blob wide enough that DRIFT_STEPS bilinear rotations
    lose less than 1e-2 of its peak, on a canvas where it has decayed below 1e-3.
    """
    return smooth_image(rng, DRIFT_SIZE, sigma=DRIFT_SIGMA, blobs=1, spread=1.0)


def rotate_steps(x, steps: int) -> Tensor:
    """`steps` successive rotations by 2 pi / steps, one full turn in total."""
    for _ in range(steps):
        x = rotate_plane(x, 2 * math.pi / steps)
    return x


def _interior(array: np.ndarray, margin: int) -> np.ndarray:
    if margin == 0:
        return array
    return array[..., margin:-margin, margin:-margin]


def _disk(size: int, radius: float) -> np.ndarray:
    half = (size - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(size) - half, np.arange(size) - half, indexing='ij')
    return np.hypot(rows, cols) <= radius


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar <out, weights> so every output element carries a distinct gradient."""
    return (out * weights.astype(out.dtype)).sum()


def quarter_turn_probes(group: CyclicRotationGroup) -> list:
    """Non-identity elements of `group` that are exact quarter turns."""
    return [g for g in group.elements if g.index and (4 * g.index) % group.order == 0]


# --------------------------------------------------------------------------
# group
# --------------------------------------------------------------------------
def _group_checks(config: VerifyConfig) -> List[Check]:
    checks = []
    for n in sorted(set(GROUP_ORDERS) | {config.n_alpha}):
        checks.append(Check(f"axioms C_{n}", lambda rng, n=n: float(CyclicRotationGroup(n).axiom_violations()),
                            'exact'))

    def regular_composition(rng):
        group, worst = CyclicRotationGroup(4), 0.0
        for _ in range(config.samples):
            fmap = RegularFeatureMap(Tensor(_normal(rng, 2, 4, 5, 5)), group)
            for g in group.elements:
                for h in group.elements:
                    lhs = act_on_regular(g, act_on_regular(h, fmap)).data.data
                    rhs = act_on_regular(group.compose(g, h), fmap).data.data
                    worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        return worst

    def quarter_closure(rng):
        worst = 0.0
        for _ in range(config.samples):
            x = Tensor(_normal(rng, 2, 6, 6))
            y = x
            for _ in range(4):
                y = rotate_plane(y, math.pi / 2)
            worst = max(worst, float(np.max(np.abs(y.data - x.data))))
        return worst

    def orbit_average(rng):
        group, worst = CyclicRotationGroup(4), 0.0
        for _ in range(config.samples):
            x = Tensor(_normal(rng, 6, 6))
            reference = group_average(ad.stack([act_on_plane(group, g, x) ** 2 for g in group.elements]), group)
            for h in group.elements:
                moved = act_on_plane(group, h, x)
                averaged = group_average(ad.stack([act_on_plane(group, g, moved) ** 2 for g in group.elements]),
                                         group)
                worst = max(worst, float(np.max(np.abs(averaged.data - reference.data))))
        return worst

    checks += [Check('regular action composition C_4', regular_composition, 'exact'),
               Check('quarter turn closure', quarter_closure, 'exact'),
               Check('orbit average invariance C_4', orbit_average, 'summation')]
    return checks


# --------------------------------------------------------------------------
# equivariance
# --------------------------------------------------------------------------
def _equivariance_checks(config: VerifyConfig) -> List[Check]:
    k = 3
    margin = (k - 1) // 2

    def lifting(rng):
        basis = build_basis(k, 2, 4)
        group, worst = basis.group, 0.0
        for _ in range(config.samples):
            filt = SteerableFilter.create('psi', 2, 3, basis, rng)
            x = Tensor(_normal(rng, 2, 9, 9))
            out = lifting_conv(x, filt, basis)
            for g in group.elements:
                lhs = lifting_conv(act_on_plane(group, g, x), filt, basis).data.data
                rhs = act_on_regular(g, out).data.data
                worst = max(worst, float(np.max(np.abs(_interior(lhs - rhs, margin)))))
        return worst

    def group_convolution(rng):
        basis = build_basis(k, 2, 4)
        group, worst = basis.group, 0.0
        for _ in range(config.samples):
            filt = SteerableFilter.create('psi', 2, 3, basis, rng, group_input=True)
            fmap = RegularFeatureMap(Tensor(_normal(rng, 2, 4, 9, 9)), group)
            out = group_conv(fmap, filt, basis)
            for g in group.elements:
                lhs = group_conv(act_on_regular(g, fmap), filt, basis).data.data
                rhs = act_on_regular(g, out).data.data
                worst = max(worst, float(np.max(np.abs(_interior(lhs - rhs, margin)))))
        return worst

    def pooling(rng):
        group, worst = CyclicRotationGroup(4), 0.0
        for _ in range(config.samples):
            fmap = RegularFeatureMap(Tensor(_normal(rng, 3, 4, 6, 6)), group)
            for g in group.elements:
                lhs = group_max_pool(act_on_regular(g, fmap)).data
                rhs = act_on_plane(group, g, group_max_pool(fmap)).data
                worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        return worst

    def trivial_group(rng):
        basis = build_basis(k, 2, 1)
        worst = 0.0
        for _ in range(config.samples):
            filt = SteerableFilter.create('psi', 2, 3, basis, rng, group_input=True)
            fmap = RegularFeatureMap(Tensor(_normal(rng, 2, 1, 7, 7)), basis.group)
            kernel = np.einsum('oib,bxy->oixy', filt.coefficients.data[:, :, 0, :], basis.filters[0])
            direct = conv2d(fmap.data.reshape(2, 7, 7), kernel).data
            worst = max(worst, float(np.max(np.abs(group_conv(fmap, filt, basis).data.data[:, 0] - direct))))
        return worst

    order = config.n_alpha if 4 % config.n_alpha else 8

    def interpolated(rng):
        basis = build_basis(k, 2, order)
        group, size, worst = basis.group, 31, 0.0
        region = _disk(size, (size - 1) / 2.0 - 2 * k)
        g = group.element(1)
        for _ in range(max(1, config.samples // 4)):
            filt = SteerableFilter.create('psi', 1, 2, basis, rng)
            x = Tensor(smooth_image(rng, size))
            lhs = lifting_conv(act_on_plane(group, g, x), filt, basis).data.data
            rhs = act_on_regular(g, lifting_conv(x, filt, basis)).data.data
            scale = float(np.max(np.abs(rhs[..., region])))
            worst = max(worst, float(np.max(np.abs(lhs - rhs)[..., region])) / scale)
        return worst

    def rotation_drift(rng):
        x = Tensor(drift_blob(rng))
        return float(np.max(np.abs(rotate_steps(x, DRIFT_STEPS).data - x.data)))

    return [Check('lifting_conv C_4', lifting, 'summation'),
            Check('group_conv C_4', group_convolution, 'summation'),
            Check('group_max_pool C_4', pooling, 'exact'),
            Check('group_conv C_1 equals conv2d', trivial_group, 'summation'),
            Check(f"lifting_conv C_{order} smooth input", interpolated, 'interpolation'),
            Check(f"rotate_plane {DRIFT_STEPS} x {360 / DRIFT_STEPS:g} degrees", rotation_drift, 'interpolation')]


# --------------------------------------------------------------------------
# invariance
# --------------------------------------------------------------------------
def _head_factories() -> Dict[str, Callable]:
    """Head builders taking (rng, input size, largest monomial exponent)."""
    def monomial(rng, size, exponent_cap):
        specs = [MonomialSpec((0.0,) + tuple(rng.choice([0.0, 1.0, 1.5, 2.0], size=2)),
                              tuple(rng.uniform(0.0, exponent_cap, size=3)), origin=j) for j in range(4)]
        return MonomialIIHead(specs, 'shift')

    return {
        'monomial': monomial,
        'ws-global': lambda rng, size, cap: WSIIHead.create(3, 4, (size, size), 'global', rng),
        'ws-local': lambda rng, size, cap: WSIIHead.create(3, 4, (3, 3), 'local', rng),
        'mlp': lambda rng, size, cap: MLPIIHead.create(3, [8, 4], 3, rng),
        'sa': lambda rng, size, cap: SAIIHead.create(3, 4, 2, size, size, rng, out_channels=5),
        'spatial-max': lambda rng, size, cap: SpatialMaxHead(),
    }


def rotated_input(rng: np.random.Generator, channels: int = 3) -> np.ndarray:
    return smooth_image(rng, ROTATED_SIZE, channels=channels, sigma=ROTATED_SIGMA, spread=1.5)


def _invariance_checks(config: VerifyConfig) -> List[Check]:
    group = CyclicRotationGroup(config.n_alpha)
    probes = quarter_turn_probes(group)
    # the smallest rotation of C_n is a lattice rotation only for n in (1, 2, 4)
    off_lattice = group.order not in (1, 2, 4)
    checks = []
    for kind, factory in _head_factories().items():
        if probes:
            def measure(rng, factory=factory):
                head = factory(rng, 7, group.order / 3)
                worst = 0.0
                for _ in range(config.samples):
                    x = Tensor(_normal(rng, 3, 7, 7))
                    worst = max(worst, max(invariance_residual(head, x, group, p) for p in probes))
                return worst
            checks.append(Check(f"{kind} head", measure, 'invariance'))
        if off_lattice:
            def rotated(rng, factory=factory):
                head = factory(rng, ROTATED_SIZE, 4 / 3)
                worst = 0.0
                for _ in range(max(1, config.samples // 4)):
                    x = Tensor(rotated_input(rng))
                    worst = max(worst, invariance_residual(head, x, group, 1, relative_to='sample'))
                return worst
            checks.append(Check(f"{kind} head, {360 / group.order:g} degree rotation", rotated,
                                'rotated-invariance'))

    def softmax_rows(rng):
        head = SAIIHead.create(3, 4, 2, 5, 5, rng, out_channels=4)
        worst = 0.0
        for _ in range(config.samples):
            for rows in head.attention_rows(Tensor(_normal(rng, 3, 5, 5)), group):
                worst = max(worst, float(np.max(np.abs(rows.sum(axis=-1) - 1.0))))
        return worst

    checks.append(Check('sa softmax rows', softmax_rows, 'softmax'))
    if not probes:
        return checks
    for kind in ('monomial', 'ws-local', 'mlp', 'sa', 'spatial-max'):
        def pipeline(rng, kind=kind):
            model = build_model(_pipeline_config(kind, group.order), rng)
            images = _normal(rng, 4, 1, 8, 8)
            return model_invariance_residual(model, images)
        checks.append(Check(f"{kind} model logits", pipeline, 'pipeline'))
    return checks


def _pipeline_config(kind: str, order: int) -> ModelConfig:
    head = HeadConfig(kind=kind, monomials=3, factors=2, distances=[0.0, 1.0], out_channels=4,
                      mlp_widths=[4], sa_channels=4, sa_heads=2)
    return ModelConfig(image_size=8, classes=3, channels=[2, 2], n_alpha=order, n_f=2, pool_after=[0],
                       head=head, dense=[4])


# --------------------------------------------------------------------------
# weighted-sum identity
# --------------------------------------------------------------------------
def _ws_checks(config: VerifyConfig) -> List[Check]:
    checks = []
    for n in sorted(set(WS_ORDERS) | {config.n_alpha}):
        def measure(rng, n=n):
            group, worst = CyclicRotationGroup(n), 0.0
            for _ in range(WS_PAIRS):
                x = _normal(rng, 2, 7, 7)
                kernel = _normal(rng, 3, 2, 3, 3)
                worst = max(worst, ws_groupconv_equivalence(x, kernel, group))
            return worst
        checks.append(Check(f"local WS vs pooled lifting conv C_{n}", measure, 'ws-identity'))
    return checks


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------
def _gradient_checks(config: VerifyConfig) -> List[Check]:
    step = GRADIENT_STEPS[config.precision]
    group = CyclicRotationGroup(config.n_alpha)

    def repeated(build):
        def measure(rng):
            worst = 0.0
            for _ in range(config.samples):
                fn, tensors = build(rng)
                worst = max(worst, max_gradient_error(fn, tensors, step))
            return worst
        return measure

    def leaf(rng, *shape, positive=False):
        return Tensor(_positive(rng, *shape) if positive else _normal(rng, *shape), requires_grad=True)

    def conv(rng):
        x, w = leaf(rng, 1, 2, 5, 5), leaf(rng, 3, 2, 3, 3)
        r = _normal(rng, 1, 3, 5, 5)
        return (lambda: _project(conv2d(x, w), r)), [x, w]

    def dense_softmax(rng):
        x, w, b = leaf(rng, 4, 5), leaf(rng, 5, 3), leaf(rng, 3)
        labels = rng.integers(0, 3, size=4)
        return (lambda: cross_entropy(dense(x, w, b), labels)), [x, w, b]

    def sampling(rng):
        image = leaf(rng, 2, 5, 5)
        coords = rng.uniform(-0.5, 4.5, size=(7, 2))
        r = _normal(rng, 2, 7)
        return (lambda: _project(bilinear_sample(image, coords), r)), [image]

    def rotation(rng):
        x = leaf(rng, 2, 5, 5)
        r = _normal(rng, 2, 5, 5)
        return (lambda: _project(rotate_plane(x, math.pi / 6), r)), [x]

    def pooling(rng):
        x = leaf(rng, 1, 2, 4, 4)
        r = _normal(rng, 1, 2, 2, 2)
        return (lambda: _project(max_pool2d(x), r)), [x]

    def normalization(rng):
        x, gamma, beta = leaf(rng, 4, 3), leaf(rng, 3), leaf(rng, 3)
        r = _normal(rng, 4, 3)
        return (lambda: _project(batch_norm(x, gamma, beta, axis=1)[0], r)), [x, gamma, beta]

    def dropped(rng):
        x = leaf(rng, 3, 4)
        r = _normal(rng, 3, 4)
        seed = int(rng.integers(2 ** 31))
        return (lambda: _project(dropout(x, 0.3, True, np.random.default_rng(seed)), r)), [x]

    def lifting(rng):
        basis = build_basis(3, 2, group.order)
        filt = SteerableFilter.create('psi', 2, 2, basis, rng)
        bias = Parameter('bias', _normal(rng, 2))
        x = leaf(rng, 2, 5, 5)
        r = _normal(rng, 2, group.order, 5, 5)
        return (lambda: _project(lifting_conv(x, filt, basis, bias).data, r)), [filt.coefficients, bias, x]

    def group_convolution(rng):
        basis = build_basis(3, 2, group.order)
        filt = SteerableFilter.create('psi', 2, 2, basis, rng, group_input=True)
        fmap = RegularFeatureMap(leaf(rng, 2, group.order, 4, 4), group)
        r = _normal(rng, 2, group.order, 4, 4)
        return (lambda: _project(group_conv(fmap, filt, basis).data, r)), [filt.coefficients, fmap.data]

    def monomial(rng):
        specs = [MonomialSpec((0.0,) + tuple(rng.choice([0.0, 1.0, 1.5], size=2)),
                              tuple(rng.uniform(0.0, 1.0, size=3)), origin=j) for j in range(3)]
        head = MonomialIIHead(specs, 'none')
        x = leaf(rng, 2, 6, 6, positive=True)
        r = _normal(rng, 2 * head.count)
        return (lambda: _project(head(x, group), r)), [head.exponents, x]

    def weighted_sum(rng):
        local = WSIIHead.create(2, 3, (3, 3), 'local', rng)
        overall = WSIIHead.create(2, 3, (4, 4), 'global', rng, name='global.kernel')
        x = leaf(rng, 2, 4, 4)
        r = _normal(rng, 3)
        return (lambda: _project(local(x, group), r) + _project(overall(x, group), r)), \
            [local.kernel, overall.kernel, x]

    def mlp(rng):
        head = MLPIIHead.create(2, [4, 3], 3, rng)
        for b in head.biases:
            b.data = _normal(rng, *b.shape) * 0.1
        x = leaf(rng, 2, 4, 4)
        r = _normal(rng, 3)
        return (lambda: _project(head(x, group), r)), head.parameters() + [x]

    def attention(rng):
        head = SAIIHead.create(2, 2, 2, 3, 3, rng, out_channels=3)
        head.encodings.data = _normal(rng, *head.encodings.shape) * 0.5
        x = leaf(rng, 2, 3, 3)
        r = _normal(rng, 9, 3)
        return (lambda: _project(head(x, group), r)), head.parameters() + [x]

    return [Check('conv2d', repeated(conv), 'gradient'),
            Check('dense + cross-entropy', repeated(dense_softmax), 'gradient'),
            Check('bilinear_sample', repeated(sampling), 'gradient'),
            Check('rotate_plane 30 degrees', repeated(rotation), 'gradient'),
            Check('max_pool2d', repeated(pooling), 'gradient'),
            Check('batch_norm', repeated(normalization), 'gradient'),
            Check('dropout', repeated(dropped), 'gradient'),
            Check('lifting_conv', repeated(lifting), 'gradient'),
            Check('group_conv', repeated(group_convolution), 'gradient'),
            Check('monomial head', repeated(monomial), 'gradient'),
            Check('ws heads', repeated(weighted_sum), 'gradient'),
            Check('mlp head', repeated(mlp), 'gradient'),
            Check('sa head', repeated(attention), 'gradient')]


# --------------------------------------------------------------------------
# pruning
# --------------------------------------------------------------------------
def magnitude_oracle(weight: np.ndarray, n_m: int) -> np.ndarray:
    """Scalar double loop over (channel, output) for every monomial."""
    channels, outputs = weight.shape[0] // n_m, weight.shape[1]
    scores = np.zeros(n_m)
    for j in range(n_m):
        total = 0.0
        for c in range(channels):
            for o in range(outputs):
                total += abs(float(weight[c * n_m + j, o]))
        scores[j] = total / (channels * outputs)
    return scores


def _pruning_model(rng: np.random.Generator):
    head = HeadConfig(kind='monomial', monomials=4, factors=2, distances=[0.0, 1.0])
    config = ModelConfig(image_size=8, classes=3, channels=[2], n_alpha=4, n_f=2, pool_after=[], head=head,
                         dense=[5])
    return build_model(config, rng), synth_shapes(6, 8, 3, rng)


def _pruning_checks(config: VerifyConfig) -> List[Check]:
    def oracle(rng):
        worst = 0.0
        for _ in range(config.samples):
            weight = _normal(rng, 3 * 5, 4)
            worst = max(worst, float(np.max(np.abs(magnitude_scores(weight, 5).scores - magnitude_oracle(weight, 5)))))
        return worst

    def sensitivity(rng):
        model, data = _pruning_model(rng)
        scores = connectivity_scores(model, data).scores
        mask = Tensor(np.ones(model.monomial_head().count, dtype=ad.get_default_dtype()), requires_grad=True)

        def loss():
            model.set_monomial_mask(mask)
            return cross_entropy(model.forward(data.images), data.labels)

        try:
            numeric = numeric_gradient(loss, mask, GRADIENT_STEPS[config.precision])
        finally:
            model.set_monomial_mask(None)
        return relative_error(scores, np.abs(numeric))

    def rescaling(rng):
        mismatches = 0.0
        for _ in range(config.samples):
            weight = _normal(rng, 3 * 6, 4)
            scale = float(rng.uniform(0.1, 10.0))
            keep = int(rng.integers(1, 6))
            if rank(magnitude_scores(weight, 6).scores, keep) != rank(magnitude_scores(weight * scale, 6).scores, keep):
                mismatches += 1
        return mismatches

    def permutation(rng):
        worst = 0.0
        for _ in range(config.samples):
            weight = _normal(rng, 3 * 5, 4)
            order = rng.permutation(5)
            permuted = weight.reshape(3, 5, 4)[:, order, :].reshape(15, 4)
            diff = magnitude_scores(permuted, 5).scores - magnitude_scores(weight, 5).scores[order]
            worst = max(worst, float(np.max(np.abs(diff))))
        return worst

    return [Check('magnitude scores vs double loop', oracle, 'score'),
            Check('sensitivity vs mask finite differences', sensitivity, 'sensitivity'),
            Check('selection under positive rescaling', rescaling, 'exact'),
            Check('scores under pool permutation', permutation, 'score')]


SUITE_CHECKS = {
    'group': _group_checks,
    'equivariance': _equivariance_checks,
    'invariance': _invariance_checks,
    'ws-identity': _ws_checks,
    'gradients': _gradient_checks,
    'pruning': _pruning_checks,
}


# --------------------------------------------------------------------------
# runner
# --------------------------------------------------------------------------
def _check_rng(seed: int, suite: str, index: int) -> np.random.Generator:
    key = (CONSUMERS.index('verify'), SUITES.index(suite), index)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def run_check(config: VerifyConfig, suite: str, index: int, check: Check) -> CheckResult:
    tolerance = TOLERANCES[config.precision][check.tolerance]
    try:
        with ad.default_dtype(ad.precision_dtype(config.precision)):
            residual = float(check.measure(_check_rng(config.seed, suite, index)))
    except RinvError as exc:
        return CheckResult(suite, check.name, math.inf, tolerance, f"{type(exc).__name__}: {exc}")
    return CheckResult(suite, check.name, residual, tolerance)


def run_suites(config: VerifyConfig, threads: Optional[int] = None) -> List[CheckResult]:
    """Run every check of the selected suites; results come back in registration order."""
    if config.precision not in TOLERANCES:
        raise ConfigError(f"must be one of {sorted(TOLERANCES)}, got {config.precision}", 'verify.precision')
    jobs = [(suite, i, check) for suite in config.suites() for i, check in enumerate(SUITE_CHECKS[suite](config))]
    threads = threads or settings.RINV['THREADS']
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [pool.submit(run_check, config, suite, i, check) for suite, i, check in jobs]
        results = [f.result() for f in futures]
    for result in results:
        logger.log(logging.INFO if result.passed else logging.WARNING, "%s", result.line())
    failed = sum(not r.passed for r in results)
    logger.info("%d checks, %d failed (%d-bit, n_alpha=%d)", len(results), failed, config.precision, config.n_alpha)
    return results
