"""
Mini-batch SGD with worst-case perturbation injection.

Each step computes grad_x L at the clean batch, turns every row into its own
eps (held constant with respect to the parameters), and descends on the loss
at x + eps. Without a PerturbSpec the step is plain SGD.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm.auto import tqdm

from gradreg.dataio import Dataset
from gradreg.errors import DivergedTrainingError, InvalidParameterError
from gradreg.model import Layer, MlpModel, backprop_batch, input_gradients, max_norm_project, predict
from gradreg.numcore import make_rng
from gradreg.perturb import PerturbSpec, perturb_rows, worst_case_epsilon

logger = logging.getLogger(__name__)

EVAL_BATCH = 2048
METRICS_HEADER = ("epoch", "train_loss", "val_error", "mean_input_grad_norm")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int = 100
    seed: int = 0
    spec: Optional[PerturbSpec] = None
    weight_decay: float = 0.0
    max_norm: Optional[float] = None
    momentum: float = 0.5
    progress: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise InvalidParameterError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidParameterError(f"batch_size must be at least 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise InvalidParameterError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.max_norm is not None and not self.max_norm > 0:
            raise InvalidParameterError(f"max_norm must be positive, got {self.max_norm}")


Velocity = Tuple[Tuple[np.ndarray, np.ndarray], ...]


@dataclass(frozen=True)
class EpochResult:
    model: MlpModel
    mean_loss: float
    mean_clean_loss: float
    # fraction of steps whose perturbed cross-entropy is >= the clean one
    loss_increase_fraction: float
    velocity: Velocity


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_error: Optional[float]
    mean_input_grad_norm: float


@dataclass
class TrainResult:
    model: MlpModel
    history: List[EpochRecord] = field(default_factory=list)


@dataclass
class TwoStageResult:
    model: MlpModel
    stage1_model: MlpModel
    target_loss: float
    stage2_epochs: int
    stopped_by: str  # "target" or "cap"
    history: List[EpochRecord] = field(default_factory=list)
    test_errors: Dict[str, float] = field(default_factory=dict)


def _zero_velocity(model: MlpModel) -> Velocity:
    return tuple((np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.layers)


def _apply_step(model: MlpModel, grads, velocity: Velocity, cfg: TrainConfig) -> Tuple[MlpModel, Velocity]:
    layers, new_velocity = [], []
    for layer, (g_w, g_b), (v_w, v_b) in zip(model.layers, grads, velocity):
        v_w = cfg.momentum * v_w - cfg.learning_rate * g_w
        v_b = cfg.momentum * v_b - cfg.learning_rate * g_b
        layers.append(Layer(layer.weight + v_w, layer.bias + v_b, layer.activation))
        new_velocity.append((v_w, v_b))
    stepped = MlpModel(tuple(layers))
    if cfg.max_norm is not None:
        stepped = max_norm_project(stepped, cfg.max_norm)
    return stepped, tuple(new_velocity)


def sgd_epoch(
    model: MlpModel,
    data: Dataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
    velocity: Optional[Velocity] = None,
    epoch: int = 0,
) -> EpochResult:
    """One shuffled pass; returns the mean of the post-perturbation batch losses."""
    if data.dim != model.input_dim:
        raise InvalidParameterError(f"data dim {data.dim} does not match model input dim {model.input_dim}")
    if velocity is None:
        velocity = _zero_velocity(model)
    order = rng.permutation(len(data))
    targets = data.targets
    losses, clean_losses, increased = [], [], 0
    steps = range(0, len(data), cfg.batch_size)
    for step, start in enumerate(tqdm(steps, desc=f"epoch {epoch}", leave=False, disable=not cfg.progress)):
        idx = order[start : start + cfg.batch_size]
        X, T = data.inputs[idx], targets[idx]
        if cfg.spec is not None:
            # forward/backprop at x for eps, then at x + eps for the update
            clean = backprop_batch(model, X, T)
            X = X + worst_case_epsilon(clean.grad_input, cfg.spec)
            clean_loss = float(clean.xent.mean())
        bundle = backprop_batch(model, X, T, cfg.weight_decay)
        if not math.isfinite(bundle.loss):
            raise DivergedTrainingError(epoch, step, bundle.loss)
        xent = float(bundle.xent.mean())
        if cfg.spec is None:
            clean_loss = xent
        increased += xent >= clean_loss
        losses.append(bundle.loss)
        clean_losses.append(clean_loss)
        model, velocity = _apply_step(model, bundle.grad_params, velocity, cfg)
    n_steps = max(len(losses), 1)
    return EpochResult(
        model,
        float(np.mean(losses)) if losses else 0.0,
        float(np.mean(clean_losses)) if clean_losses else 0.0,
        increased / n_steps,
        velocity,
    )


def evaluate_error(model: MlpModel, data: Dataset) -> float:
    """Fraction of rows whose argmax prediction differs from the label."""
    if len(data) == 0:
        return 0.0
    wrong = 0
    for start in range(0, len(data), EVAL_BATCH):
        rows = slice(start, start + EVAL_BATCH)
        wrong += int(np.count_nonzero(predict(model, data.inputs[rows]) != data.labels[rows]))
    return wrong / len(data)


def mean_input_grad_norm(model: MlpModel, data: Dataset) -> float:
    if len(data) == 0:
        return 0.0
    targets = data.targets
    total = 0.0
    for start in range(0, len(data), EVAL_BATCH):
        rows = slice(start, start + EVAL_BATCH)
        grads = input_gradients(model, data.inputs[rows], targets[rows])
        total += float(np.linalg.norm(grads, axis=1).sum())
    return total / len(data)


def dataset_loss(model: MlpModel, data: Dataset, cfg: TrainConfig) -> float:
    """Mean training objective over ``data``: perturbed when cfg.spec is set, decay included."""
    if len(data) == 0:
        raise InvalidParameterError("cannot evaluate the loss of an empty dataset")
    targets = data.targets
    total = 0.0
    for start in range(0, len(data), EVAL_BATCH):
        rows = slice(start, start + EVAL_BATCH)
        X, T = data.inputs[rows], targets[rows]
        if cfg.spec is not None:
            X = X + perturb_rows(model, X, T, cfg.spec)
        total += float(backprop_batch(model, X, T).xent.sum())
    return total / len(data) + cfg.weight_decay * model.weight_sq_sum()


def _record(epoch: int, result: EpochResult, val: Optional[Dataset]) -> EpochRecord:
    probe = val if val is not None and len(val) else None
    record = EpochRecord(
        epoch,
        result.mean_loss,
        evaluate_error(result.model, probe) if probe is not None else None,
        mean_input_grad_norm(result.model, probe) if probe is not None else float("nan"),
    )
    logger.info(
        "epoch %d: train_loss=%.6f val_error=%s grad_norm=%.6f",
        epoch,
        record.train_loss,
        "n/a" if record.val_error is None else f"{record.val_error:.4f}",
        record.mean_input_grad_norm,
    )
    return record


def write_metrics_csv(history: Sequence[EpochRecord], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(METRICS_HEADER)
        for rec in history:
            writer.writerow(
                [
                    rec.epoch,
                    repr(rec.train_loss),
                    "" if rec.val_error is None else repr(rec.val_error),
                    repr(rec.mean_input_grad_norm),
                ]
            )


def train(
    model: MlpModel,
    data: Dataset,
    cfg: TrainConfig,
    val: Optional[Dataset] = None,
    csv_path: Optional[Union[str, Path]] = None,
    rng: Optional[np.random.Generator] = None,
) -> TrainResult:
    rng = rng if rng is not None else make_rng(cfg.seed)
    result = TrainResult(model)
    velocity = None
    for epoch in range(1, cfg.epochs + 1):
        epoch_result = sgd_epoch(result.model, data, cfg, rng, velocity, epoch)
        result.model, velocity = epoch_result.model, epoch_result.velocity
        result.history.append(_record(epoch, epoch_result, val))
    if csv_path is not None:
        write_metrics_csv(result.history, csv_path)
    return result


def train_two_stage(
    model: MlpModel,
    full: Dataset,
    n_first: int,
    cfg: TrainConfig,
    max_stage2_epochs: Optional[int] = None,
    test: Optional[Dataset] = None,
    csv_path: Optional[Union[str, Path]] = None,
) -> TwoStageResult:
    """
    Stage 1 trains on the first ``n_first`` rows and records their loss L*.
    Stage 2 trains on all rows until the held-out slice ``[n_first:]`` reaches
    a loss <= L* (checked once per epoch) or the epoch cap fires.
    """
    if not 0 < n_first < len(full):
        raise InvalidParameterError(f"n_first={n_first} must leave a non-empty held-out slice of {len(full)} rows")
    first, held_out = full.subset(slice(0, n_first)), full.subset(slice(n_first, len(full)))
    rng = make_rng(cfg.seed)

    stage1 = train(model, first, cfg, val=held_out, rng=rng)
    target = dataset_loss(stage1.model, first, cfg)
    logger.info("stage 1 done after %d epochs, target loss %.6f", cfg.epochs, target)

    cap = max_stage2_epochs if max_stage2_epochs is not None else 2 * cfg.epochs
    history = list(stage1.history)
    current, velocity, stopped_by, epochs_run = stage1.model, None, "cap", 0
    for epoch in range(1, cap + 1):
        epoch_result = sgd_epoch(current, full, cfg, rng, velocity, cfg.epochs + epoch)
        current, velocity = epoch_result.model, epoch_result.velocity
        history.append(_record(cfg.epochs + epoch, epoch_result, held_out))
        epochs_run = epoch
        held_loss = dataset_loss(current, held_out, cfg)
        logger.debug("stage 2 epoch %d held-out loss %.6f", epoch, held_loss)
        if held_loss <= target:
            stopped_by = "target"
            break
    logger.info("stage 2 stopped by %s after %d epochs", stopped_by, epochs_run)

    if csv_path is not None:
        write_metrics_csv(history, csv_path)
    result = TwoStageResult(current, stage1.model, target, epochs_run, stopped_by, history)
    if test is not None:
        result.test_errors = {
            "stage1": evaluate_error(stage1.model, test),
            "stage2": evaluate_error(current, test),
        }
    return result


@dataclass(frozen=True)
class SigmaSelection:
    best_sigma: float
    errors: Dict[float, float]


def select_sigma(
    model: MlpModel,
    train_data: Dataset,
    val: Dataset,
    cfg: TrainConfig,
    sigmas: Sequence[float] = (0.1, 0.5, 1.0, 2.0),
    p: float = 2.0,
) -> SigmaSelection:
    """Train one copy per sigma from the same initial model and keep the lowest validation error."""
    errors = {}
    for sigma in sigmas:
        trial_cfg = replace(cfg, spec=PerturbSpec(p, sigma))
        trained = train(model, train_data, trial_cfg).model
        errors[sigma] = evaluate_error(trained, val)
        logger.info("sigma=%g validation error %.4f", sigma, errors[sigma])
    best = min(errors, key=lambda s: (errors[s], s))
    return SigmaSelection(best, errors)
