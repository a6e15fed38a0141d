"""
Run orchestration shared by the management commands: build the data and the
model for a run config, train, select monomials, evaluate checkpoints and
record results in the run registry.
"""
import contextlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from django.conf import settings

from . import autodiff as ad
from .checkpoints import load_checkpoint
from .config import RunConfig, canonical_toml, load_run_config
from .datasets import LabeledImages, load_dataset, load_idx, subsample
from .exceptions import ConfigError
from .heads import MonomialSpec
from .models import EvaluationRecord, TrainingRun
from .network import LayerStack, ModelConfig, build_model
from .selection import (SelectionConfig, SelectionResult, connectivity_select, init_pool, magnitude_prune,
                        read_sidecar, select_random, write_sidecar)
from .streams import SeedStreams
from .training import IterationPlan, Metrics, Trainer, evaluate, fit_epochs

logger = logging.getLogger(__name__)

SUMMARY_NAME = 'summary.json'
SIDECAR_NAME = 'monomials.json'


@contextlib.contextmanager
def numeric_context(precision: int):
    """Default dtype for the run, plus finite-output checks when RINV_DEBUG_CHECKS is on."""
    with ad.default_dtype(ad.precision_dtype(precision)), ad.finite_checks(settings.RINV['DEBUG_CHECKS']):
        yield


def parse_subset(value: Union[None, str, int, float]) -> Optional[Union[int, float]]:
    """'0.5' is a fraction, '500' a sample count."""
    if value is None or value == '':
        return None
    if isinstance(value, str):
        try:
            number = float(value)
        except ValueError:
            raise ConfigError(f"expected a fraction or a count, got {value!r}", 'data.subset') from None
    else:
        number = float(value)
    if number <= 0:
        raise ConfigError(f"must be positive, got {value!r}", 'data.subset')
    if number > 1.0:
        if not number.is_integer():
            raise ConfigError(f"use a fraction in (0, 1] or a whole count, got {value!r}", 'data.subset')
        return int(number)
    return number


def _cast(data: LabeledImages) -> LabeledImages:
    return LabeledImages(data.images.astype(ad.get_default_dtype(), copy=False), data.labels)


@dataclass
class PreparedRun:
    config: RunConfig
    seed: int
    streams: SeedStreams
    train: LabeledImages
    test: LabeledImages
    full_size: int
    plan: IterationPlan
    out_dir: Path

    @property
    def subset_size(self) -> Optional[int]:
        return len(self.train) if len(self.train) != self.full_size else None


def default_out_dir(config: RunConfig, seed: int, suffix: str = '') -> Path:
    name = config.name or config.model.head.kind
    return Path(settings.RINV['RUNS_DIR']) / f"{name}{suffix}-seed{seed}"


def prepare(config: RunConfig, seed: Optional[int] = None, out_dir: Optional[Union[str, Path]] = None,
            subset=None) -> PreparedRun:
    """
    Load the data for `config`, apply the subset (CLI value wins over the
    config's) and plan the iteration budget. Call inside `numeric_context`.
    """
    seed = config.train.seed if seed is None else int(seed)
    streams = SeedStreams(seed)
    train, test = load_dataset(config.data)
    if train.image_size != (config.model.image_size, config.model.image_size):
        raise ConfigError(f"model expects {config.model.image_size}px images, data has {train.image_size}",
                          'model.image_size')
    full_size = len(train)
    amount = parse_subset(subset) if subset is not None else config.data.subset
    if amount is not None:
        train, _ = subsample(train, amount, streams['subset'], config.data.stratified)
        logger.info("training on %d of %d samples, per class %s", len(train), full_size,
                    train.class_counts(config.data.classes))
    plan = IterationPlan.create(config.train, full_size, len(train))
    out_dir = Path(out_dir) if out_dir else default_out_dir(config, seed)
    return PreparedRun(config, seed, streams, _cast(train), _cast(test), full_size, plan, out_dir)


def _trainer(run: PreparedRun, model: LayerStack) -> Trainer:
    return Trainer(model, run.train, run.test, run.config.train, run.plan, run.streams,
                   run.config.data.augmentation, run.out_dir)


def _warn_exponent_drift(model: LayerStack):
    if model.config.head.kind == 'monomial':
        drift = model.monomial_head().exponent_drift(model.group)
        if drift > 0:
            logger.warning("monomial exponents exceed |G|=%d by %.4f", model.group.order, drift)


def write_summary(run: PreparedRun, metrics: Metrics, extra: Optional[Dict] = None) -> Path:
    summary = metrics.summary(run.seed)
    summary.update(subset=run.subset_size, epochs=run.plan.epochs, **(extra or {}))
    path = run.out_dir / SUMMARY_NAME
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + '\n')
    (run.out_dir / 'config.toml').write_text(canonical_toml(run.config))
    return path


def record_run(run: PreparedRun, model: LayerStack, metrics: Metrics, label: Optional[str] = None) -> TrainingRun:
    return TrainingRun.objects.create(
        label=label or run.config.name or model.config.head.kind,
        config_name=run.config.name,
        seed=run.seed,
        head_kind=model.config.head.kind,
        subset_size=run.subset_size,
        test_error=metrics.test_error,
        parameters=model.parameter_count(),
        invariance_residual=metrics.invariance_residual,
        checkpoint=str(run.out_dir / 'model.rinv'),
    )


def train_run(run: PreparedRun, monomials: Optional[Sequence[MonomialSpec]] = None) -> Tuple[LayerStack, Metrics]:
    model = build_model(run.config.model, run.streams['init'], monomials)
    trainer = _trainer(run, model)
    trainer.run()
    metrics = trainer.finish()
    _warn_exponent_drift(model)
    write_summary(run, metrics)
    logger.info("finished %s seed %d: test error %s, %d parameters, invariance residual %s",
                run.config.name or 'run', run.seed, metrics.test_error, metrics.parameters,
                metrics.invariance_residual)
    return model, metrics


def load_monomials(path: Union[str, Path], config: ModelConfig) -> List[MonomialSpec]:
    specs, group_order = read_sidecar(path)
    if not specs:
        raise ConfigError(f"{path} holds no monomials", 'model.head.monomials')
    if config.head.kind != 'monomial':
        raise ConfigError(f"monomial sidecar given for a {config.head.kind!r} head", 'model.head.kind')
    if group_order and group_order != config.n_alpha:
        logger.warning("monomials in %s were selected for |G|=%d, model uses %d", path, group_order, config.n_alpha)
    return specs


def selection_config(config: RunConfig, **overrides) -> SelectionConfig:
    selection = config.selection or SelectionConfig(seed=config.train.seed)
    selection = replace(selection, **{k: v for k, v in overrides.items() if v is not None})
    if overrides.get('target') is not None and config.selection and config.selection.schedule:
        # an explicit target replaces the final step at its epoch; earlier steps keeping no more survive
        *earlier, (last_epoch, _) = selection.schedule
        schedule = [s for s in earlier if s[1] > selection.target]
        selection = replace(selection, schedule=schedule + [(last_epoch, selection.target)])
    return selection.validate()


def prune_run(run: PreparedRun, selection: SelectionConfig) -> Tuple[LayerStack, Metrics, SelectionResult]:
    """
    Select n_m monomials from a pool of M, then continue training the
    survivors for the rest of the iteration budget.
    """
    head = run.config.model.head
    if head.kind != 'monomial':
        raise ConfigError(f"monomial selection needs a monomial head, got {head.kind!r}", 'model.head.kind')
    fitted = selection.fitted(run.plan.epochs, run.plan.epoch_scale)
    if fitted.steps() != selection.steps():
        logger.info("prune steps rescaled to %d epochs: %s", run.plan.epochs, fitted.steps())
    selection = fitted
    group_order = run.config.model.n_alpha if run.config.model.backbone == 'steerable' else 1
    pool = init_pool(selection, head, group_order, run.streams['selection'])
    logger.info("%s selection from a pool of %d monomials down to %d", selection.algorithm, len(pool),
                selection.target)
    if selection.algorithm == 'random':
        chosen = select_random(pool, selection.target, run.streams['selection'])
        result = SelectionResult(chosen)
        model = build_model(run.config.model, run.streams['init'], chosen)
        trainer = _trainer(run, model)
    else:
        model = build_model(run.config.model, run.streams['init'], pool)
        trainer = _trainer(run, model)
        fit = fit_epochs(trainer)
        if selection.algorithm == 'magnitude':
            result = magnitude_prune(model, selection, fit)
        else:
            result = connectivity_select(model, run.train, selection, fit, run.config.train.batch_size)
    write_sidecar(run.out_dir / SIDECAR_NAME, result.specs, group_order)
    trainer.run(max(0, run.plan.epochs - trainer.epoch))
    metrics = trainer.finish()
    _warn_exponent_drift(model)
    steps = [{'epoch': s.epoch, 'pool': s.pool_before, 'kept': s.kept, 'checksum': s.checksum}
             for s in result.steps]
    write_summary(run, metrics, {'selection': selection.algorithm, 'steps': steps})
    return model, metrics, result


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------
def model_from_checkpoint(path: Union[str, Path]) -> LayerStack:
    """Rebuild the model described by the checkpoint's config section and load its tensors."""
    checkpoint = load_checkpoint(path)
    if not checkpoint.config or 'model' not in checkpoint.config:
        raise ConfigError(f"{path} has no model description; cannot rebuild the network")
    config = ModelConfig.from_dict(checkpoint.config['model'])
    head = checkpoint.config.get('head', {})
    monomials = None
    if config.head.kind == 'monomial':
        monomials = [MonomialSpec(**m) for m in head.get('monomials', [])]
    floats = [t.dtype for t in checkpoint.tensors.values() if np.issubdtype(t.dtype, np.floating)]
    dtype = floats[0] if floats else ad.get_default_dtype()
    with ad.default_dtype(dtype):
        model = build_model(config, np.random.default_rng(0), monomials)
    model.load_state_dict(checkpoint.tensors)
    return model


def load_eval_data(data: Union[str, Path]) -> LabeledImages:
    """A run config (its test split) or an IDX prefix."""
    if str(data).endswith('.toml'):
        return load_dataset(load_run_config(data).data)[1]
    return load_idx(data)


def evaluate_checkpoint(path: Union[str, Path], data: Union[str, Path], label: str = '') -> EvaluationRecord:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no checkpoint at {path}", 'checkpoint')
    model = model_from_checkpoint(path)
    dtype = model.parameters()[0].dtype
    with ad.default_dtype(dtype):
        test = _cast(load_eval_data(data))
        error = evaluate(model, test)
    logger.info("%s on %s: error rate %.6f over %d samples", path, data, error, len(test))
    return EvaluationRecord.objects.create(checkpoint=str(path), data_source=str(data), error_rate=error,
                                           label=label)


def aggregate(label: str) -> Optional[Tuple[float, float, int]]:
    return TrainingRun.objects.filter(label=label).mte()
