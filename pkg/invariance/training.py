"""
Training loop, optimizers, regularization and evaluation.

Training on a subset keeps the total number of iterations of a full-data run:
the epoch count is scaled up (rounded up) and the loop stops exactly at the
iteration budget. Learning-rate decay epochs are scaled by the same factor.
"""
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Parameter, Tensor, backward, zero_grad
from .checkpoints import save_checkpoint
from .datasets import LabeledImages, augment
from .exceptions import ContractError, NumericalAbort
from .functional import cross_entropy
from .sampling import rotate_plane
from .streams import SeedStreams

logger = logging.getLogger(__name__)

OPTIMIZERS = ('adam', 'sgd')
DECAY_MODES = ('exponential', 'step')
CSV_HEADER = ('epoch', 'split', 'loss', 'error')


@dataclass
class TrainConfig:
    optimizer: str = 'adam'
    learning_rate: float = 1e-3
    decay: str = 'exponential'
    decay_factor: float = 0.9
    decay_epoch: float = 1.0
    batch_size: int = 64
    epochs: int = 30
    iterations: Optional[int] = None
    elastic_net: float = 1e-7
    elastic_alpha: float = 0.5
    weight_decay: float = 0.0
    reg_constant: float = 1.0
    momentum: float = 0.9
    precision: int = 32
    smoke_threshold: Optional[float] = None
    seed: int = 0


@dataclass(frozen=True)
class IterationPlan:
    """How many epochs and iterations a run on `size` samples gets."""
    size: int
    batch_size: int
    epochs: int
    iterations: int
    decay_epoch: float
    full_epochs: int = 0

    @property
    def epoch_scale(self) -> float:
        """Epochs of this run per epoch of a full-data run."""
        return self.epochs / self.full_epochs if self.full_epochs else 1.0

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.size / self.batch_size)

    @classmethod
    def create(cls, config: TrainConfig, full_size: int, size: Optional[int] = None) -> 'IterationPlan':
        size = full_size if size is None else size
        if size < 1 or config.batch_size < 1:
            raise ContractError(f"need at least one sample and batch size >= 1, got {size} and {config.batch_size}")
        full_per_epoch = math.ceil(full_size / config.batch_size)
        budget = config.iterations or config.epochs * full_per_epoch
        full_epochs = math.ceil(budget / full_per_epoch)
        epochs = math.ceil(budget / math.ceil(size / config.batch_size))
        decay_epoch = config.decay_epoch * epochs / full_epochs if full_epochs else config.decay_epoch
        if size != full_size:
            logger.info("subset of %d/%d samples: %d epochs rescaled to %d (%d iterations)",
                        size, full_size, full_epochs, epochs, budget)
        return cls(size, config.batch_size, epochs, budget, decay_epoch, full_epochs)


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    error: float


@dataclass
class Metrics:
    records: List[EpochRecord] = field(default_factory=list)
    test_error: Optional[float] = None
    test_loss: Optional[float] = None
    iterations: int = 0
    parameters: int = 0
    invariance_residual: Optional[float] = None
    wall_clock: float = 0.0

    def summary(self, seed: int) -> Dict:
        return {'mte': self.test_error, 'std': 0.0, 'seeds': [seed], 'params': self.parameters,
                'invariance_residual': self.invariance_residual, 'iterations': self.iterations}


# --------------------------------------------------------------------------
# optimizers
# --------------------------------------------------------------------------
class Optimizer:
    def __init__(self, params: Sequence[Parameter]):
        self.params = list(params)

    def step(self, grads: Dict[Parameter, np.ndarray], lr: float):
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, momentum: float = 0.9):
        super().__init__(params)
        self.momentum = momentum
        self.velocity = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self, grads, lr):
        for p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            v = self.velocity[id(p)] = self.momentum * self.velocity[id(p)] + g
            p.data = (p.data - lr * v).astype(p.dtype)


class Adam(Optimizer):
    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {id(p): np.zeros_like(p.data) for p in self.params}
        self.v = {id(p): np.zeros_like(p.data) for p in self.params}
        self.t = 0

    def step(self, grads, lr):
        self.t += 1
        correction1 = 1 - self.beta1 ** self.t
        correction2 = 1 - self.beta2 ** self.t
        for p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            key = id(p)
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * g * g
            update = (self.m[key] / correction1) / (np.sqrt(self.v[key] / correction2) + self.eps)
            p.data = (p.data - lr * update).astype(p.dtype)


def make_optimizer(config: TrainConfig, params: Sequence[Parameter]) -> Optimizer:
    if config.optimizer == 'adam':
        return Adam(params)
    if config.optimizer == 'sgd':
        return SGD(params, config.momentum)
    raise ContractError(f"unknown optimizer {config.optimizer!r}")


def learning_rate(config: TrainConfig, epoch: int, decay_epoch: Optional[float] = None) -> float:
    decay_epoch = decay_epoch or config.decay_epoch
    if config.decay == 'exponential':
        return config.learning_rate * config.decay_factor ** (epoch / decay_epoch)
    if config.decay == 'step':
        return config.learning_rate * config.decay_factor ** math.floor(epoch / decay_epoch)
    raise ContractError(f"unknown decay mode {config.decay!r}")


def regularization(params: Sequence[Parameter], config: TrainConfig) -> Optional[Tensor]:
    """
    reg_constant * (elastic-net on steerable coefficients + weight decay on
    tagged weights): lambda * (alpha * |w|_1 + (1 - alpha) * |w|_2^2).
    """
    terms = []
    for p in params:
        if p.regularization == 'elastic-net' and config.elastic_net:
            terms.append(p.abs().sum() * (config.elastic_net * config.elastic_alpha)
                         + (p * p).sum() * (config.elastic_net * (1 - config.elastic_alpha)))
        elif p.regularization == 'l2' and config.weight_decay:
            terms.append((p * p).sum() * config.weight_decay)
    if not terms:
        return None
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * config.reg_constant


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------
def score(model, data: LabeledImages, batch_size: int = 256) -> Tuple[float, float]:
    """Mean cross-entropy and error rate with dropout off."""
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    loss, wrong = 0.0, 0
    for start in range(0, len(data), batch_size):
        labels = data.labels[start:start + batch_size]
        logits = model.forward(data.images[start:start + batch_size], train=False)
        loss += float(cross_entropy(logits, labels, reduction='sum').data)
        wrong += int(np.sum(np.argmax(logits.data, axis=1) != labels))
    return loss / len(data), wrong / len(data)


def evaluate(model, data: LabeledImages, batch_size: int = 256) -> float:
    return score(model, data, batch_size)[1]


def mte(errors: Sequence[float]) -> Tuple[float, float]:
    """Mean test error and population standard deviation over runs."""
    if not errors:
        raise ContractError("mte needs at least one run")
    values = np.asarray(errors, dtype=np.float64)
    return float(values.mean()), float(values.std())


def model_invariance_residual(model, images: np.ndarray) -> float:
    """Max relative logit change under exact quarter turns of the input."""
    reference = model.forward(images, train=False).data
    worst = 0.0
    for quarter in (1, 2, 3):
        rotated = rotate_plane(Tensor(images), quarter * math.pi / 2)
        moved = model.forward(rotated, train=False).data
        worst = max(worst, float(np.max(np.abs(moved - reference) / (np.abs(reference) + 1e-8))))
    return worst


# --------------------------------------------------------------------------
# loop
# --------------------------------------------------------------------------
class Trainer:
    """
    Runs epochs on one model, continuing where the previous `run` stopped.
    When `out_dir` is set, every epoch appends to metrics.csv and refreshes
    the last-good checkpoint.
    """

    def __init__(self, model, train: LabeledImages, test: Optional[LabeledImages], config: TrainConfig,
                 plan: IterationPlan, streams: SeedStreams, augmentation: str = 'none',
                 out_dir: Optional[Path] = None):
        self.model, self.train, self.test = model, train, test
        self.config, self.plan, self.streams = config, plan, streams
        self.augmentation = augmentation
        self.out_dir = Path(out_dir) if out_dir else None
        self.epoch = 0
        self.iteration = 0
        self.metrics = Metrics()
        self.last_good: Optional[Path] = None
        self._lr: Optional[float] = None
        self._optimizer = None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            with self.metrics_path.open('w', newline='') as handle:
                csv.writer(handle).writerow(CSV_HEADER)

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / 'metrics.csv'

    def _record(self, epoch: int, split: str, loss: float, error: float):
        self.metrics.records.append(EpochRecord(epoch, split, loss, error))
        if self.out_dir:
            with self.metrics_path.open('a', newline='') as handle:
                csv.writer(handle).writerow((epoch, split, f"{loss:.6f}", f"{error:.6f}"))

    def _checkpoint(self) -> Optional[Path]:
        if not self.out_dir:
            return None
        self.last_good = save_checkpoint(self.out_dir / 'last_good.rinv', self.model.state_dict(),
                                         self.model.describe())
        return self.last_good

    @property
    def exhausted(self) -> bool:
        return self.iteration >= self.plan.iterations

    def run(self, epochs: Optional[int] = None) -> Metrics:
        epochs = self.plan.epochs if epochs is None else epochs
        started = time.perf_counter()
        for _ in range(epochs):
            if self.exhausted:
                break
            self._epoch()
        self.metrics.iterations = self.iteration
        self.metrics.parameters = self.model.parameter_count()
        self.metrics.wall_clock += time.perf_counter() - started
        return self.metrics

    def _epoch(self):
        lr = learning_rate(self.config, self.epoch, self.plan.decay_epoch)
        if self._lr is not None and lr != self._lr:
            logger.info("epoch %d: learning rate %.3g", self.epoch + 1, lr)
        self._lr = lr
        params = self.model.parameters()
        optimizer = self._optimizer
        if optimizer is None or [id(p) for p in optimizer.params] != [id(p) for p in params]:
            optimizer = self._optimizer = make_optimizer(self.config, params)
        order = self.streams['data'].permutation(len(self.train))
        total_loss, wrong, seen = 0.0, 0, 0
        for start in range(0, len(order), self.config.batch_size):
            if self.exhausted:
                break
            index = order[start:start + self.config.batch_size]
            images = augment(self.train.images[index], self.augmentation, self.streams['augmentation'])
            labels = self.train.labels[index]
            logits = self.model.forward(images, train=True, rng=self.streams['dropout'])
            loss = cross_entropy(logits, labels)
            if not np.isfinite(loss.data).all():
                raise NumericalAbort(f"non-finite loss at epoch {self.epoch + 1}, iteration {self.iteration + 1}",
                                     checkpoint=str(self.last_good) if self.last_good else None)
            penalty = regularization(params, self.config)
            grads = backward(loss if penalty is None else loss + penalty)
            optimizer.step(grads, lr)
            zero_grad(params)
            self.iteration += 1
            total_loss += float(loss.data) * len(index)
            wrong += int(np.sum(np.argmax(logits.data, axis=1) != labels))
            seen += len(index)
        self.epoch += 1
        self._record(self.epoch, 'train', total_loss / seen, wrong / seen)
        if self.test is not None and len(self.test):
            test_loss, test_error = score(self.model, self.test)
            self.metrics.test_loss, self.metrics.test_error = test_loss, test_error
            self._record(self.epoch, 'test', test_loss, test_error)
            logger.info("epoch %d: train loss %.4f error %.4f | test loss %.4f error %.4f",
                        self.epoch, total_loss / seen, wrong / seen, test_loss, test_error)
        else:
            logger.info("epoch %d: train loss %.4f error %.4f", self.epoch, total_loss / seen, wrong / seen)
        self._checkpoint()

    def finish(self, residual_samples: int = 16) -> Metrics:
        """Final checkpoint, invariance residual and smoke-threshold check."""
        if self.test is not None and len(self.test):
            images = self.test.images[:residual_samples]
            self.metrics.invariance_residual = model_invariance_residual(self.model, images)
        threshold = self.config.smoke_threshold
        if threshold is not None and self.metrics.test_error is not None and self.metrics.test_error > threshold:
            logger.warning("test error %.4f above the smoke threshold %.4f", self.metrics.test_error, threshold)
        if self.out_dir:
            save_checkpoint(self.out_dir / 'model.rinv', self.model.state_dict(), self.model.describe())
        return self.metrics


def fit_epochs(trainer: Trainer):
    """Adapter for selection: fit(model, epochs) trains the trainer's model in place."""
    def fit(model, epochs: int):
        if model is not trainer.model:
            raise ContractError("fit called with a model the trainer does not own")
        trainer.run(epochs)
    return fit
