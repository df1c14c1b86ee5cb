"""Training loop, evaluation metrics, and the seasonal-naive reference.

Runs are fully deterministic given (seed, stub backend): batch order comes
from a seeded generator, the optimizer is plain Adam over the trainable set,
and early stopping restores the best-validation parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import PreparedData, iter_batches, slice_batch
from .errors import ConfigError, TrainingDivergenceError
from .model import DualBranchForecaster, total_loss

logger = logging.getLogger(__name__)


@dataclass
class TrainerSettings:
    lam: float = 1.0
    lr: float = 1e-3
    epochs: int = 10
    patience: int = 10
    batch_size: int = 32
    seed: int = 2021

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 0:
            raise ConfigError("epochs and batch_size must be >= 1, patience >= 0")
        if self.lr < 0 or self.lam < 0:
            raise ConfigError("lr and lambda must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_task: float
    train_align: float
    train_total: float
    val_mse: float


@dataclass
class TrainReport:
    history: list[EpochRecord] = field(default_factory=list)
    best_val_mse: float = float("inf")
    best_epoch: int = -1
    steps: int = 0
    status: str = "ok"  # ok | diverged

    @property
    def loss_trajectory(self) -> list[float]:
        return [record.train_total for record in self.history]


def _clone_state(model: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def evaluate(
    model: DualBranchForecaster,
    values: np.ndarray,
    starts: list[int],
    batch_size: int = 64,
) -> tuple[float, float]:
    """MSE and MAE over all windows, in standardized dataset units.

    Accumulation happens in float64 sums so the result is independent of the
    batch partition and ordering.
    """
    if len(starts) == 0:
        raise ConfigError("evaluation requires at least one window")
    cfg = model.config
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    # canonical window order: batching is then identical however the caller
    # shuffled the list, so metrics are bitwise order-independent
    starts = sorted(starts)
    model.eval()
    with torch.no_grad():
        for batch in iter_batches(values, starts, cfg.lookback, cfg.horizon, batch_size):
            preds = model(batch).predictions.double().cpu().numpy()
            err = preds - batch.targets
            sq_sum += float(np.sum(err**2))
            abs_sum += float(np.sum(np.abs(err)))
            count += err.size
    model.train()
    return sq_sum / count, abs_sum / count


def train_model(
    model: DualBranchForecaster,
    data: PreparedData,
    settings: TrainerSettings,
) -> TrainReport:
    """Adam over the trainable parameters with early stopping on validation MSE.

    On divergence (non-finite loss) the best validated parameters are
    restored and the report is flagged, rather than raising.
    """
    if len(data.train_starts) == 0:
        raise ConfigError("no training windows")
    if len(data.val_starts) == 0:
        raise ConfigError("no validation windows")
    cfg = model.config
    values = data.table.values
    optimizer = torch.optim.Adam(model.parameters(), lr=settings.lr)
    report = TrainReport()
    best_state = _clone_state(model)
    bad_epochs = 0

    for epoch in range(settings.epochs):
        rng = np.random.default_rng(np.random.SeedSequence([settings.seed, epoch]))
        task_sum = align_sum = total_sum = 0.0
        n_batches = 0
        try:
            for batch in iter_batches(
                values,
                data.train_starts,
                cfg.lookback,
                cfg.horizon,
                settings.batch_size,
                shuffle=True,
                rng=rng,
            ):
                optimizer.zero_grad()
                loss, breakdown, _ = model.compute_loss(batch, settings.lam)
                total_loss(breakdown.task, breakdown.align, settings.lam)  # finite check
                loss.backward()
                optimizer.step()
                task_sum += breakdown.task
                align_sum += breakdown.align
                total_sum += breakdown.total
                n_batches += 1
                report.steps += 1
        except TrainingDivergenceError as exc:
            logger.error("training diverged at epoch %d: %s", epoch, exc)
            report.status = "diverged"
            model.load_state_dict(best_state)
            return report

        val_mse, _ = evaluate(model, values, data.val_starts, settings.batch_size)
        record = EpochRecord(
            epoch=epoch,
            train_task=task_sum / n_batches,
            train_align=align_sum / n_batches,
            train_total=total_sum / n_batches,
            val_mse=val_mse,
        )
        report.history.append(record)
        logger.info(
            "epoch %d: task %.6f align %.6f total %.6f val_mse %.6f",
            epoch,
            record.train_task,
            record.train_align,
            record.train_total,
            val_mse,
        )
        if val_mse < report.best_val_mse:
            report.best_val_mse = val_mse
            report.best_epoch = epoch
            best_state = _clone_state(model)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > settings.patience:
                logger.info("early stopping at epoch %d", epoch)
                break

    model.load_state_dict(best_state)
    return report


def seasonal_naive_metrics(
    values: np.ndarray,
    starts: list[int],
    lookback: int,
    horizon: int,
    period: int,
) -> tuple[float, float]:
    """Repeat the last observed cycle of each window; used as a sanity oracle."""
    if period < 1 or period > lookback:
        raise ConfigError(f"period must lie in [1, lookback], got {period}")
    if len(starts) == 0:
        raise ConfigError("need at least one window")
    steps = np.arange(horizon)
    cycles_back = period * np.ceil((steps + 1) / period).astype(np.int64)
    sq_sum = abs_sum = 0.0
    count = 0
    for start in starts:
        batch = slice_batch(values, [start], lookback, horizon)
        source_rows = start + lookback + steps - cycles_back
        pred = values[source_rows]
        err = pred - batch.targets[0]
        sq_sum += float(np.sum(err**2))
        abs_sum += float(np.sum(np.abs(err)))
        count += err.size
    return sq_sum / count, abs_sum / count
