"""
Choosing n_m monomials out of a larger pool: random choice, iterative
magnitude pruning and connection-sensitivity pruning.

Monomial features are laid out channel-major (feature c * n_m + j is monomial
j on channel c), so the rows of the first dense layer after the head group
by monomial as weight.reshape(C, n_m, C_o)[:, j, :].
"""
import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import Tensor, backward, zero_grad
from .exceptions import ConfigError, ContractError, FormatError
from .functional import cross_entropy
from .heads import MonomialSpec

logger = logging.getLogger(__name__)

INIT_MODES = ('random', 'catalog')
ALGORITHMS = ('random', 'magnitude', 'connectivity')
SIDECAR_LAYOUT = 'channel-major'


@dataclass
class SelectionConfig:
    pool: int = 50
    target: int = 5
    init: str = 'random'
    algorithm: str = 'magnitude'
    pretrain_epochs: int = 10
    schedule: List[Tuple[int, int]] = field(default_factory=list)
    keep_fraction: Optional[float] = None
    iterative: bool = True
    seed: int = 0

    def validate(self):
        if self.target < 1 or self.target > self.pool:
            raise ConfigError(f"target {self.target} must be in [1, pool={self.pool}]", 'selection.target')
        if self.init not in INIT_MODES:
            raise ConfigError(f"must be one of {INIT_MODES}", 'selection.init')
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"must be one of {ALGORITHMS}", 'selection.algorithm')
        if self.keep_fraction is not None and not 0.0 < self.keep_fraction < 1.0:
            raise ConfigError(f"keep fraction must be in (0, 1), got {self.keep_fraction}", 'selection.keep_fraction')
        if self.schedule:
            keeps = [k for _, k in self.schedule]
            epochs = [e for e, _ in self.schedule]
            if any(b >= a for a, b in zip(keeps, keeps[1:])):
                raise ConfigError(f"keep counts must be strictly decreasing, got {keeps}", 'selection.schedule')
            if any(b < a for a, b in zip(epochs, epochs[1:])) or epochs[0] < 0:
                raise ConfigError(f"epochs must be non-negative and non-decreasing, got {epochs}",
                                  'selection.schedule')
            if keeps[-1] != self.target:
                raise ConfigError(f"last keep count {keeps[-1]} must equal the target {self.target}",
                                  'selection.schedule')
            if keeps[0] > self.pool:
                raise ConfigError(f"first keep count {keeps[0]} exceeds the pool {self.pool}", 'selection.schedule')
        return self

    def steps(self) -> List[Tuple[int, int]]:
        """(cumulative epoch, keep count) pairs; derived from the keep fraction when no schedule is given."""
        if self.schedule:
            return [tuple(s) for s in self.schedule]
        if self.keep_fraction is None:
            return [(self.pretrain_epochs, self.target)]
        steps, current, epoch = [], self.pool, self.pretrain_epochs
        while current > self.target:
            current = max(self.target, int(math.ceil(self.keep_fraction * current)))
            steps.append((epoch, current))
            epoch += self.pretrain_epochs
        return steps or [(self.pretrain_epochs, self.target)]

    def fitted(self, epochs: int, scale: float = 1.0) -> 'SelectionConfig':
        """
        The selection for a run of `epochs` epochs: step epochs (and the
        pre-training) scaled by `scale` like the learning-rate decay of a
        subset run. Every prune must leave at least one epoch to retrain the
        survivors.
        """
        def rescale(epoch: int) -> int:
            return int(math.ceil(epoch * scale - 1e-9))

        fitted = replace(self, schedule=[(rescale(e), k) for e, k in self.steps()],
                         pretrain_epochs=rescale(self.pretrain_epochs))
        if self.algorithm == 'random':
            return fitted
        if self.algorithm == 'connectivity' and not self.iterative:
            used, path = [(fitted.pretrain_epochs, self.target)], 'selection.pretrain_epochs'
        else:
            used, path = fitted.steps(), 'selection.schedule' if self.schedule else 'selection.pretrain_epochs'
        late = [e for e, _ in used if e >= epochs]
        if late:
            raise ConfigError(f"a prune at epoch {late[0]} leaves no epoch of retraining in a {epochs}-epoch run",
                              path)
        return fitted


@dataclass
class PruningScore:
    scores: np.ndarray
    provenance: str  # 'magnitude' | 'sensitivity'

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)):
            raise ContractError(f"{self.provenance} scores contain non-finite values")


@dataclass
class PruneStep:
    epoch: int
    pool_before: int
    kept: List[int]
    checksum: str


@dataclass
class SelectionResult:
    specs: List[MonomialSpec]
    steps: List[PruneStep] = field(default_factory=list)


# --------------------------------------------------------------------------
# pools
# --------------------------------------------------------------------------
def _exponents(rng: np.random.Generator, factors: int, group_order: int) -> Tuple[float, ...]:
    return tuple(rng.uniform(0.0, group_order / factors, size=factors).tolist())


def random_pool(count: int, head, group_order: int, rng: np.random.Generator) -> List[MonomialSpec]:
    """`count` monomials with d_1 = 0, other distances drawn from the configured set."""
    distances = [float(d) for d in head.distances]
    specs = []
    for j in range(count):
        tail = rng.choice(distances, size=head.factors - 1).tolist() if head.factors > 1 else []
        specs.append(MonomialSpec((0.0, *tail), _exponents(rng, head.factors, group_order), origin=j))
    return specs


def catalog_pool(count: int, head, group_order: int, rng: np.random.Generator) -> List[MonomialSpec]:
    """Every distance combination at least once, cycled to fill `count`; exponents stay random."""
    catalog = list(itertools.product([float(d) for d in head.distances], repeat=head.factors - 1))
    if len(catalog) > count:
        raise ContractError(f"catalog of {len(catalog)} distance combinations exceeds the pool size {count}")
    cycle = itertools.cycle(catalog)
    return [MonomialSpec((0.0, *next(cycle)), _exponents(rng, head.factors, group_order), origin=j)
            for j in range(count)]


def init_pool(config: SelectionConfig, head, group_order: int, rng: np.random.Generator) -> List[MonomialSpec]:
    if config.init == 'catalog':
        return catalog_pool(config.pool, head, group_order, rng)
    return random_pool(config.pool, head, group_order, rng)


def select_random(pool: Sequence[MonomialSpec], n_m: int,
                  seed: Union[int, np.random.Generator]) -> List[MonomialSpec]:
    if n_m > len(pool) or n_m < 0:
        raise ContractError(f"cannot select {n_m} monomials from a pool of {len(pool)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(pool), size=n_m, replace=False))
    return [pool[i] for i in chosen]


# --------------------------------------------------------------------------
# scores and ranking
# --------------------------------------------------------------------------
def magnitude_scores(weight, n_m: int) -> PruningScore:
    """s_j = mean |w| over every connection of monomial j (rows grouped channel-major)."""
    weight = weight.data if isinstance(weight, Tensor) else np.asarray(weight)
    if weight.ndim != 2 or weight.shape[0] % n_m:
        raise ContractError(f"{weight.shape[0]} dense inputs do not group into {n_m} monomials")
    grouped = np.abs(weight).reshape(weight.shape[0] // n_m, n_m, weight.shape[1])
    return PruningScore(grouped.mean(axis=(0, 2)), 'magnitude')


def rank(scores: np.ndarray, keep: int) -> List[int]:
    """Indices of the `keep` highest scores (ties to the lower index), ascending."""
    scores = np.asarray(scores)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return sorted(int(i) for i in order[:keep])


def surviving_checksum(model, kept: Sequence[int]) -> str:
    """Digest of the exponents and dense rows belonging to `kept`."""
    head = model.monomial_head()
    channels = model.head_channels()
    rows = [c * head.count + j for c in range(channels) for j in kept]
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(head.exponents.data[list(kept)]).tobytes())
    digest.update(np.ascontiguousarray(model.first_dense().weight.data[rows]).tobytes())
    return digest.hexdigest()


def _prune(model, kept: List[int], scores: np.ndarray, epoch: int) -> PruneStep:
    before = model.monomial_head().count
    checksum = surviving_checksum(model, kept)
    model.prune_monomials(kept)
    head = model.monomial_head()
    if surviving_checksum(model, range(head.count)) != checksum:
        raise ContractError("surviving weights changed across the prune boundary")
    head.scores = [float(scores[i]) for i in kept]
    logger.info("epoch %d: pruned monomial pool %d -> %d", epoch, before, head.count)
    return PruneStep(epoch, before, kept, checksum)


FitFn = Callable[[object, int], object]


def magnitude_prune(model, config: SelectionConfig, fit: FitFn) -> SelectionResult:
    """
    Train, score by mean absolute downstream weight, keep the top n_i and
    continue training the survivors, once per schedule step.
    `fit(model, epochs)` trains in place.
    """
    steps, done = [], 0
    for epoch, keep in config.steps():
        if epoch > done:
            fit(model, epoch - done)
            done = epoch
        head = model.monomial_head()
        if keep >= head.count:
            continue
        scores = magnitude_scores(model.first_dense().weight, head.count).scores
        steps.append(_prune(model, rank(scores, keep), scores, epoch))
    return SelectionResult(model.monomial_head().specs(), steps)


def connectivity_scores(model, data, batch_size: int = 64) -> PruningScore:
    """
    s_j = |dL/dc_j| for an all-ones mask c on the monomial connections, with
    L the mean cross-entropy over `data`, accumulated batch by batch.
    """
    head = model.monomial_head()
    mask = Tensor(np.ones(head.count, dtype=model.first_dense().weight.dtype), requires_grad=True)
    model.set_monomial_mask(mask)
    total = len(data)
    try:
        for start in range(0, total, batch_size):
            images = data.images[start:start + batch_size]
            labels = data.labels[start:start + batch_size]
            logits = model.forward(images, train=False)
            backward(cross_entropy(logits, labels, reduction='sum') * (1.0 / total))
    finally:
        model.set_monomial_mask(None)
        zero_grad(model.parameters())
    return PruningScore(np.abs(mask.grad), 'sensitivity')


def connectivity_select(model, data, config: SelectionConfig, fit: FitFn, batch_size: int = 64) -> SelectionResult:
    """Optionally pre-train, then keep the most sensitive monomials (once, or per schedule step)."""
    plan = config.steps() if config.iterative else [(config.pretrain_epochs, config.target)]
    steps, done = [], 0
    for epoch, keep in plan:
        if epoch > done:
            fit(model, epoch - done)
            done = epoch
        if keep >= model.monomial_head().count:
            continue
        scores = connectivity_scores(model, data, batch_size).scores
        steps.append(_prune(model, rank(scores, keep), scores, epoch))
    return SelectionResult(model.monomial_head().specs(), steps)


# --------------------------------------------------------------------------
# sidecar
# --------------------------------------------------------------------------
def write_sidecar(path: Union[str, Path], specs: Sequence[MonomialSpec], group_order: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {'layout': SIDECAR_LAYOUT, 'group_order': group_order,
                'monomials': [s.as_dict() for s in specs]}
    path.write_text(json.dumps(document, indent=2) + '\n')
    return path


def read_sidecar(path: Union[str, Path]) -> Tuple[List[MonomialSpec], int]:
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc.msg}", offset=exc.pos) from exc
    if document.get('layout') != SIDECAR_LAYOUT:
        raise FormatError(f"{path}: unsupported monomial layout {document.get('layout')!r}")
    specs = [MonomialSpec(m['distances'], m['exponents'], m.get('origin', j), m.get('score'))
             for j, m in enumerate(document.get('monomials', []))]
    return specs, int(document.get('group_order', 0))
