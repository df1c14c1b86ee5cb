"""duocast: dual-branch time series forecasting with a frozen text backbone."""

from .alignment import (
    AlignmentState,
    alignment_loss,
    pool_and_normalize,
    scale,
    scaling_factor,
    truncate,
    truncation_length,
)
from .backends import PretrainedBackend, StubBackend, build_backend
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import RunConfig, config_from_mapping, load_config
from .data import (
    DatasetTable,
    ScalerStats,
    SplitSpec,
    WindowBatch,
    few_shot_subset,
    fit_apply_scaler,
    load_dataset,
    make_splits,
    prepare,
    windowize,
)
from .model import (
    DualBranchForecaster,
    ForecastOutput,
    LossBreakdown,
    ModelConfig,
    count_params,
    task_loss,
    total_loss,
)
from .text_branch import PromptText, StatSummary, render_prompt, summarize, top_lags
from .training import TrainerSettings, evaluate, seasonal_naive_metrics, train_model
from .ts_branch import RevIN, TimeSeriesBranch, compute_patch_count, extract_patches

__version__ = "0.1.0"

__all__ = [
    "AlignmentState",
    "DatasetTable",
    "DualBranchForecaster",
    "ForecastOutput",
    "LossBreakdown",
    "ModelConfig",
    "PretrainedBackend",
    "PromptText",
    "RevIN",
    "RunConfig",
    "ScalerStats",
    "SplitSpec",
    "StatSummary",
    "StubBackend",
    "TimeSeriesBranch",
    "TrainerSettings",
    "WindowBatch",
    "alignment_loss",
    "build_backend",
    "compute_patch_count",
    "config_from_mapping",
    "count_params",
    "evaluate",
    "extract_patches",
    "few_shot_subset",
    "fit_apply_scaler",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "make_splits",
    "pool_and_normalize",
    "prepare",
    "read_checkpoint",
    "render_prompt",
    "save_checkpoint",
    "scale",
    "scaling_factor",
    "seasonal_naive_metrics",
    "summarize",
    "task_loss",
    "top_lags",
    "total_loss",
    "train_model",
    "truncate",
    "truncation_length",
    "windowize",
]
