"""
Layer stacks: an equivariant (or plain) convolutional backbone, an
invariant-integration head and fully connected layers.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, as_tensor
from .exceptions import BuildError, ContractError, DimensionError
from .functional import batch_norm, conv2d, dense, dropout, max_pool2d, relu
from .groups import CyclicRotationGroup, RegularFeatureMap
from .heads import (HEAD_KINDS, InvariantHead, MLPIIHead, MonomialIIHead, MonomialSpec, SAIIHead,
                    SpatialMaxHead, WSIIHead)
from .selection import random_pool
from .steerable import (SteerableBasis, SteerableFilter, build_basis, group_conv, group_max_pool, lifting_conv,
                        param_ratio, rescaled_channels)

logger = logging.getLogger(__name__)

BUDGET_TOLERANCE = 0.05
BACKBONES = ('steerable', 'cnn')

Carrier = Union[Tensor, RegularFeatureMap]


@dataclass
class HeadConfig:
    kind: str = 'monomial'
    monomials: int = 5
    factors: int = 3
    distances: List[float] = field(default_factory=lambda: [0.0, 1.0, 2.0])
    init: str = 'random'
    positivity: str = 'shift'
    ws_kernel: int = 3
    out_channels: int = 32
    mlp_widths: List[int] = field(default_factory=lambda: [32])
    mlp_patch: int = 3
    mlp_bias: bool = True
    sa_channels: int = 16
    sa_heads: int = 1
    attention_dropout: float = 0.0


@dataclass
class ModelConfig:
    backbone: str = 'steerable'
    in_channels: int = 1
    image_size: int = 24
    classes: int = 4
    channels: List[int] = field(default_factory=lambda: [16, 32, 32])
    kernel_size: int = 3
    n_alpha: int = 8
    n_f: int = 16
    pool_after: List[int] = field(default_factory=lambda: [0])
    batch_norm: bool = False
    head: HeadConfig = field(default_factory=HeadConfig)
    dense: List[int] = field(default_factory=lambda: [90])
    dropout: float = 0.0
    rescale: bool = False

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'ModelConfig':
        data = dict(data)
        data['head'] = HeadConfig(**data.get('head', {}))
        return cls(**data)


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------
def _data(x: Carrier) -> Tensor:
    return x.data if isinstance(x, RegularFeatureMap) else x


def _like(x: Carrier, data: Tensor) -> Carrier:
    return RegularFeatureMap(data, x.group) if isinstance(x, RegularFeatureMap) else data


class Layer:
    name = ''

    def forward(self, x: Carrier, train: bool = False, rng: Optional[np.random.Generator] = None) -> Carrier:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def parameters(self) -> List[Parameter]:
        return []

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class LiftingConvLayer(Layer):
    def __init__(self, name: str, basis: SteerableBasis, filt: SteerableFilter, bias: Parameter):
        self.name, self.basis, self.filter, self.bias = name, basis, filt, bias

    def forward(self, x, train=False, rng=None):
        return lifting_conv(x, self.filter, self.basis, self.bias)

    def parameters(self):
        return [self.filter.coefficients, self.bias]


class GroupConvLayer(Layer):
    def __init__(self, name: str, basis: SteerableBasis, filt: SteerableFilter, bias: Parameter):
        self.name, self.basis, self.filter, self.bias = name, basis, filt, bias

    def forward(self, x, train=False, rng=None):
        return group_conv(x, self.filter, self.basis, self.bias)

    def parameters(self):
        return [self.filter.coefficients, self.bias]


class GroupPoolLayer(Layer):
    name = 'group_pool'

    def forward(self, x, train=False, rng=None):
        return group_max_pool(x)


class Conv2dLayer(Layer):
    def __init__(self, name: str, weight: Parameter, bias: Parameter):
        self.name, self.weight, self.bias = name, weight, bias

    def forward(self, x, train=False, rng=None):
        return conv2d(x, self.weight) + self.bias.reshape(-1, 1, 1)

    def parameters(self):
        return [self.weight, self.bias]


class ReLU(Layer):
    def __init__(self, name: str = 'relu'):
        self.name = name

    def forward(self, x, train=False, rng=None):
        return _like(x, relu(_data(x)))


class MaxPool2d(Layer):
    def __init__(self, name: str = 'pool', size: int = 2):
        self.name, self.size = name, size

    def forward(self, x, train=False, rng=None):
        return _like(x, max_pool2d(_data(x), self.size))


class BatchNorm(Layer):
    """Batch statistics while training, running statistics at evaluation."""

    def __init__(self, name: str, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        dtype = ad.get_default_dtype()
        self.name, self.momentum, self.eps = name, momentum, eps
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        data = _data(x)
        shape = [1] * data.ndim
        shape[1] = data.shape[1]
        if train:
            out, mean, var = batch_norm(data, self.gamma, self.beta, axis=1, eps=self.eps)
            self.running_mean = ((1 - self.momentum) * self.running_mean + self.momentum * mean).astype(
                self.running_mean.dtype)
            self.running_var = ((1 - self.momentum) * self.running_var + self.momentum * var).astype(
                self.running_var.dtype)
        else:
            scale = (1.0 / np.sqrt(self.running_var + self.eps)).astype(data.dtype)
            out = (data - self.running_mean.astype(data.dtype).reshape(shape)) * scale.reshape(shape)
            out = out * self.gamma.reshape(shape) + self.beta.reshape(shape)
        return _like(x, out)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def load_buffer(self, key: str, value: np.ndarray):
        setattr(self, key.rsplit('.', 1)[1], value.astype(self.running_mean.dtype))

    def keep(self, indices: Sequence[int]):
        self.gamma = Parameter(self.gamma.name, self.gamma.data[indices].copy())
        self.beta = Parameter(self.beta.name, self.beta.data[indices].copy())
        self.running_mean = self.running_mean[indices].copy()
        self.running_var = self.running_var[indices].copy()


class Dropout(Layer):
    def __init__(self, name: str, rate: float):
        self.name, self.rate = name, rate

    def forward(self, x, train=False, rng=None):
        return dropout(x, self.rate, train, rng)


class HeadLayer(Layer):
    name = 'head'

    def __init__(self, head: InvariantHead, group: CyclicRotationGroup):
        self.head, self.group = head, group

    def forward(self, x, train=False, rng=None):
        return self.head.features(x, self.group, train, rng)

    def parameters(self):
        return self.head.parameters()


class Dense(Layer):
    """x @ W + b; an optional input mask multiplies every row of W (connection indicators)."""

    def __init__(self, name: str, weight: Parameter, bias: Parameter, activation: str = 'relu'):
        self.name, self.weight, self.bias, self.activation = name, weight, bias, activation
        self.input_mask: Optional[Tensor] = None

    def forward(self, x, train=False, rng=None):
        if self.input_mask is not None:
            x = x * self.input_mask
        out = dense(x, self.weight, self.bias)
        return relu(out) if self.activation == 'relu' else out

    def parameters(self):
        return [self.weight, self.bias]

    def keep_inputs(self, rows: Sequence[int]):
        self.weight = Parameter(self.weight.name, self.weight.data[rows].copy(), self.weight.regularization)


# --------------------------------------------------------------------------
# stack
# --------------------------------------------------------------------------
class LayerStack:
    def __init__(self, layers: Sequence[Layer], group: CyclicRotationGroup, config: ModelConfig):
        self.layers = list(layers)
        self.group = group
        self.config = config
        self.parameters()

    def forward(self, x, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        out: Carrier = as_tensor(x)
        for layer in self.layers:
            out = layer.forward(out, train, rng)
        return out

    __call__ = forward

    def parameters(self) -> List[Parameter]:
        params, seen = [], set()
        for layer in self.layers:
            for p in layer.parameters():
                if p.name in seen:
                    raise ContractError(f"duplicate parameter name {p.name!r}")
                seen.add(p.name)
                params.append(p)
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def extractor_parameter_count(self) -> int:
        """Parameters of the convolutional feature extractor (everything before the head)."""
        return sum(p.size for layer in self.layers[:self.head_index] for p in layer.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {p.name: p.data for p in self.parameters()}
        for layer in self.layers:
            state.update(layer.buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = {p.name: p for p in self.parameters()}
        buffers = {k: layer for layer in self.layers for k in layer.buffers()}
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing, extra = sorted(expected - set(state)), sorted(set(state) - expected)
            raise ContractError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, value in state.items():
            if name in params:
                if params[name].shape != value.shape:
                    raise DimensionError(f"{name}: stored shape {value.shape}, model shape {params[name].shape}")
                params[name].data = value.astype(params[name].dtype)
            else:
                buffers[name].load_buffer(name, value)

    @property
    def head_index(self) -> int:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, HeadLayer):
                return i
        raise ContractError("model has no head")

    @property
    def head(self) -> InvariantHead:
        return self.layers[self.head_index].head

    def first_dense(self) -> Dense:
        """The first fully connected layer after the head."""
        for layer in self.layers[self.head_index + 1:]:
            if isinstance(layer, Dense):
                return layer
        raise ContractError("model has no dense layer after the head")

    def head_channels(self) -> int:
        return self.first_dense().weight.shape[0] // self.head.count

    def monomial_head(self) -> MonomialIIHead:
        if not isinstance(self.head, MonomialIIHead):
            raise ContractError(f"model head is {self.head.kind!r}, not a monomial head")
        return self.head

    def set_monomial_mask(self, mask: Optional[Tensor]):
        """Multiply every connection of monomial j by mask[j] (None removes the mask)."""
        head = self.monomial_head()
        dense_layer = self.first_dense()
        if mask is None:
            dense_layer.input_mask = None
            return
        channels = self.head_channels()
        ones = np.ones((channels, 1), dtype=mask.dtype)
        dense_layer.input_mask = (as_tensor(mask).reshape(1, head.count) * ones).reshape(channels * head.count)

    def prune_monomials(self, keep: Sequence[int]):
        """Drop every monomial not in `keep`; surviving weights are carried over untouched."""
        head = self.monomial_head()
        keep = sorted(int(k) for k in keep)
        channels = self.head_channels()
        rows = [c * head.count + j for c in range(channels) for j in keep]
        self.layers[self.head_index].head = head.keep(keep)
        for layer in self.layers[self.head_index + 1:]:
            if isinstance(layer, BatchNorm):
                layer.keep(rows)
            if isinstance(layer, Dense):
                layer.keep_inputs(rows)
                layer.input_mask = None
                break

    def describe(self) -> Dict:
        return {'model': self.config.to_dict(), 'head': self.head.describe()}


# --------------------------------------------------------------------------
# builder
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Budget:
    equivariant: int
    reference: int

    @property
    def ratio(self) -> float:
        return self.equivariant / self.reference

    @property
    def matched(self) -> bool:
        return abs(self.ratio - 1.0) <= BUDGET_TOLERANCE


def effective_channels(config: ModelConfig) -> List[int]:
    """Backbone widths after the channel-rescale policy."""
    if config.backbone != 'steerable' or not config.rescale:
        return list(config.channels)
    factor = param_ratio(config.kernel_size, config.n_alpha, config.n_f).channel_factor
    return [rescaled_channels(c, factor) for c in config.channels]


def reference_extractor_count(config: ModelConfig) -> int:
    """Plain CNN with the configured widths: k^2 * c_in * c_out weights plus biases per layer."""
    total, c_in = 0, config.in_channels
    for c in config.channels:
        total += config.kernel_size ** 2 * c_in * c + c
        c_in = c
    return total


def feature_extractor_budget(config: ModelConfig) -> Budget:
    total, c_in = 0, config.in_channels
    n_alpha = config.n_alpha if config.backbone == 'steerable' else 1
    for i, c in enumerate(effective_channels(config)):
        if config.backbone == 'steerable':
            total += 2 * config.n_f * c_in * c * (1 if i == 0 else n_alpha) + c
        else:
            total += config.kernel_size ** 2 * c_in * c + c
        c_in = c
    return Budget(total, reference_extractor_count(config))


def _he(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(ad.get_default_dtype())


def _zeros(n: int) -> np.ndarray:
    return np.zeros(n, dtype=ad.get_default_dtype())


def _build_head(config: ModelConfig, group: CyclicRotationGroup, channels: int, size: Tuple[int, int],
                rng: np.random.Generator, monomials: Optional[Sequence[MonomialSpec]]) -> InvariantHead:
    head = config.head
    if head.kind == 'monomial':
        if monomials is None:
            monomials = random_pool(head.monomials, head, group.order, rng)
        return MonomialIIHead(monomials, head.positivity)
    if head.kind == 'ws-global':
        return WSIIHead.create(channels, head.out_channels, size, 'global', rng)
    if head.kind == 'ws-local':
        return WSIIHead.create(channels, head.out_channels, (head.ws_kernel, head.ws_kernel), 'local', rng)
    if head.kind == 'mlp':
        return MLPIIHead.create(channels, head.mlp_widths, head.mlp_patch, rng, head.mlp_bias)
    if head.kind == 'sa':
        return SAIIHead.create(channels, head.sa_channels, head.sa_heads, size[0], size[1], rng,
                               out_channels=head.out_channels if head.sa_heads > 1 else None,
                               attention_dropout=head.attention_dropout)
    if head.kind == 'spatial-max':
        return SpatialMaxHead()
    raise BuildError(f"unknown head kind {head.kind!r}, expected one of {HEAD_KINDS}")


def build_model(config: ModelConfig, rng: np.random.Generator,
                monomials: Optional[Sequence[MonomialSpec]] = None) -> LayerStack:
    """
    Backbone -> (group pool) -> head -> dense layers. Parameters use the
    current default dtype; `monomials` overrides the random initial pool of a
    monomial head.
    """
    if config.backbone not in BACKBONES:
        raise BuildError(f"unknown backbone {config.backbone!r}")
    if not config.channels:
        raise BuildError("backbone needs at least one convolution layer")
    steerable = config.backbone == 'steerable'
    group = CyclicRotationGroup(config.n_alpha if steerable else 1)
    basis = build_basis(config.kernel_size, config.n_f, config.n_alpha) if steerable else None
    channels = effective_channels(config)

    layers: List[Layer] = []
    c_in, size = config.in_channels, config.image_size
    previous = 'input'
    for i, c in enumerate(channels):
        name = f"conv{i}"
        if steerable:
            filt = SteerableFilter.create(f"{name}.coefficients", c_in, c, basis, rng, group_input=i > 0)
            layer_type = LiftingConvLayer if i == 0 else GroupConvLayer
            layers.append(layer_type(name, basis, filt, Parameter(f"{name}.bias", _zeros(c))))
        else:
            weight = Parameter(f"{name}.weight", _he(rng, (c, c_in, config.kernel_size, config.kernel_size),
                                                      c_in * config.kernel_size ** 2), 'l2')
            layers.append(Conv2dLayer(name, weight, Parameter(f"{name}.bias", _zeros(c))))
        if config.batch_norm:
            layers.append(BatchNorm(f"{name}.bn", c))
        layers.append(ReLU(f"{name}.relu"))
        previous = name
        if i in config.pool_after:
            if size < 2:
                raise BuildError(f"cannot pool a {size}x{size} map", (name, f"{name}.pool"))
            layers.append(MaxPool2d(f"{name}.pool"))
            size //= 2
            previous = f"{name}.pool"
        c_in = c
    if steerable:
        layers.append(GroupPoolLayer())
        previous = 'group_pool'

    head = _build_head(config, group, c_in, (size, size), rng, monomials)
    if isinstance(head, MonomialIIHead) and size - 2 * head.margin < 1:
        raise BuildError(f"monomial distance {head.margin} leaves no valid center on a {size}x{size} map",
                         (previous, 'head'))
    if isinstance(head, WSIIHead) and head.mode == 'local' and config.head.ws_kernel % 2 == 0:
        raise BuildError(f"local WS kernel must be odd, got {config.head.ws_kernel}", (previous, 'head'))
    layers.append(HeadLayer(head, group))
    features = head.output_features(c_in)
    if config.batch_norm and isinstance(head, MonomialIIHead):
        layers.append(BatchNorm('head.bn', features))

    widths = list(config.dense) + [config.classes]
    for i, width in enumerate(widths):
        if config.dropout > 0:
            layers.append(Dropout(f"dense{i}.dropout", config.dropout))
        name = f"dense{i}"
        last = i == len(widths) - 1
        layers.append(Dense(name, Parameter(f"{name}.weight", _he(rng, (features, width), features), 'l2'),
                            Parameter(f"{name}.bias", _zeros(width)), 'none' if last else 'relu'))
        features = width

    model = LayerStack(layers, group, config)
    budget = feature_extractor_budget(config)
    logger.info("built %s model with %s head: %d parameters, extractor %d vs plain reference %d (%.3f)",
                config.backbone, head.kind, model.parameter_count(), budget.equivariant, budget.reference,
                budget.ratio)
    if steerable and config.rescale and not budget.matched:
        logger.warning("extractor budget off by %.1f%% from the plain reference", 100 * (budget.ratio - 1))
    return model
