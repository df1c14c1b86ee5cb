"""End-to-end dual-branch forecaster.

Per channel instance: instance-normalize, patch/embed/map the series into the
backbone hidden space; summarize the raw window into a prompt, encode it with
the frozen backbone, truncate and rescale; concatenate both token stacks and
project through one head to the horizon, then invert the instance
normalization. The frozen backbone lives outside the module tree so
``model.parameters()`` is exactly the trainable set.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .alignment import (
    AlignmentState,
    alignment_loss,
    pool_and_normalize_batch,
    scale,
    scaling_factor_batch,
    truncate_batch,
    truncation_length,
)
from .backends import TextBackend
from .data import WindowBatch
from .errors import ConfigError, ShapeError, TrainingDivergenceError
from .text_branch import DEFAULT_TEMPLATE, TextBranch
from .ts_branch import RevIN, TimeSeriesBranch, compute_patch_count

HEAD_KINDS = ("full", "lowrank")


@dataclass(frozen=True)
class ModelConfig:
    """Everything the forecaster architecture depends on."""

    lookback: int
    horizon: int
    n_channels: int
    patch_len: int = 16
    stride: int = 8
    d_model: int = 16
    d_llm: int = 768
    n_learn: int = 8
    head: str = "full"
    head_rank: int = 32
    revin_affine: bool = True
    revin_eps: float = 1e-5
    stats_on_raw: bool = True
    per_feature_std: bool = False
    force_alpha: float | None = None
    n_e_override: int | None = None
    learnable_position: bool = False
    dataset_name: str = "dataset"
    template: str = field(default=DEFAULT_TEMPLATE, repr=False)

    def __post_init__(self):
        if self.lookback < self.patch_len:
            raise ConfigError(f"lookback {self.lookback} < patch_len {self.patch_len}")
        if self.horizon < 1 or self.n_channels < 1:
            raise ConfigError("horizon and n_channels must be positive")
        if self.head not in HEAD_KINDS:
            raise ConfigError(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if self.n_learn < 0:
            raise ConfigError("n_learn must be >= 0")
        if self.n_e_override is not None and not (1 <= self.n_e_override <= self.n_patches):
            raise ConfigError(
                f"n_e_override {self.n_e_override} outside [1, {self.n_patches}]"
            )
        if self.force_alpha is not None and self.force_alpha <= 0:
            raise ConfigError("force_alpha must be positive")

    @property
    def n_patches(self) -> int:
        return compute_patch_count(self.lookback, self.patch_len, self.stride)

    @property
    def n_text_tokens(self) -> int:
        if self.n_e_override is not None:
            return self.n_e_override
        return truncation_length(self.n_patches, self.horizon, self.lookback)

    def fingerprint(self) -> str:
        payload = asdict(self)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class ForecastOutput:
    """Forecasts plus the per-instance embeddings the loss and exports need.

    Instances are ordered batch-major then channel: index = b * N + c.
    """

    predictions: torch.Tensor          # (B, H, N), standardized dataset units
    ts_tokens: torch.Tensor            # (M, N_P, d_llm)
    text_tokens_scaled: torch.Tensor   # (M, N_E, d_llm)
    text_pooled_raw: torch.Tensor      # (M, d_llm), detached
    text_raw_std: torch.Tensor         # (M,), std over real raw-prompt entries, detached
    alpha: torch.Tensor                # (M,) per-instance scaling factors, detached

    @property
    def ts_std(self) -> torch.Tensor:
        return self.ts_tokens.detach().flatten(1).std(dim=1, correction=0)

    @property
    def text_std(self) -> torch.Tensor:
        return self.text_tokens_scaled.detach().flatten(1).std(dim=1, correction=0)


@dataclass(frozen=True)
class LossBreakdown:
    task: float
    align: float
    lam: float
    total: float

    def __post_init__(self):
        if self.total != self.task + self.lam * self.align:
            raise ShapeError("total must equal task + lam * align exactly")


def task_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every prediction entry."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def total_loss(task: float, align: float, lam: float) -> LossBreakdown:
    """Combine the two objectives; rejects non-finite inputs."""
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    if not (math.isfinite(task) and math.isfinite(align)):
        raise TrainingDivergenceError(f"non-finite loss: task={task}, align={align}")
    return LossBreakdown(task=task, align=align, lam=lam, total=task + lam * align)


class DualBranchForecaster(nn.Module):
    def __init__(self, config: ModelConfig, backend: TextBackend, dtype: torch.dtype = torch.float32):
        super().__init__()
        if backend.d_llm != config.d_llm:
            raise ConfigError(
                f"backend hidden size {backend.d_llm} != config d_llm {config.d_llm}"
            )
        self.config = config
        self.backend = backend  # intentionally not a submodule: frozen weights stay outside
        self.dtype_ = dtype
        self.revin = RevIN(config.n_channels, eps=config.revin_eps, affine=config.revin_affine)
        self.ts_branch = TimeSeriesBranch(
            lookback=config.lookback,
            patch_len=config.patch_len,
            stride=config.stride,
            d_model=config.d_model,
            d_llm=config.d_llm,
            learnable_position=config.learnable_position,
        )
        self.text_branch = TextBranch(
            backend,
            dataset_name=config.dataset_name,
            lookback=config.lookback,
            horizon=config.horizon,
            n_learn=config.n_learn,
            template=config.template,
        )
        n_tokens = config.n_text_tokens + config.n_patches
        if config.head == "full":
            self.head_proj = None
            self.head = nn.Linear(n_tokens * config.d_llm, config.horizon)
        else:
            self.head_proj = nn.Linear(config.d_llm, config.head_rank)
            self.head = nn.Linear(n_tokens * config.head_rank, config.horizon)
        self.align_state = AlignmentState()
        self.to(dtype)

    def _as_instances(self, array: np.ndarray) -> np.ndarray:
        # (B, L, N) -> (B*N, L), batch-major then channel
        return np.ascontiguousarray(np.transpose(array, (0, 2, 1))).reshape(-1, array.shape[1])

    def forward(self, batch: WindowBatch) -> ForecastOutput:
        inputs = np.asarray(batch.inputs, dtype=np.float64)
        bsz, lookback, n_ch = inputs.shape
        if lookback != self.config.lookback or n_ch != self.config.n_channels:
            raise ShapeError(
                f"batch of shape {inputs.shape} does not match model "
                f"(L={self.config.lookback}, N={self.config.n_channels})"
            )
        x = torch.as_tensor(inputs, dtype=self.dtype_)
        normalized, state = self.revin.normalize(x)
        instances = normalized.permute(0, 2, 1).reshape(bsz * n_ch, lookback)
        ts_tokens = self.ts_branch(instances)

        if self.config.stats_on_raw:
            prompt_windows = self._as_instances(inputs)
        else:
            prompt_windows = instances.detach().cpu().double().numpy()
        encoded, lengths = self.text_branch(prompt_windows)
        text_trunc = truncate_batch(encoded, lengths, self.config.n_text_tokens)

        if self.config.force_alpha is not None:
            alpha = torch.full((), self.config.force_alpha, dtype=self.dtype_)
        else:
            alpha = scaling_factor_batch(text_trunc, ts_tokens, self.config.per_feature_std)
        text_scaled = scale(text_trunc, alpha)

        joint = torch.cat([text_scaled, ts_tokens], dim=1)
        if self.head_proj is not None:
            joint = self.head_proj(joint)
        horizon_vals = self.head(joint.flatten(1))  # (M, H)
        preds_norm = horizon_vals.reshape(bsz, n_ch, self.config.horizon).permute(0, 2, 1)
        predictions = self.revin.denormalize(preds_norm, state)

        t_max = encoded.shape[1]
        raw = encoded.detach()
        row_mask = (torch.arange(t_max).unsqueeze(0) < lengths.unsqueeze(1)).to(raw.dtype)
        entry_counts = lengths.to(raw.dtype) * raw.shape[-1]
        pooled_raw = (raw * row_mask.unsqueeze(-1)).sum(dim=1) / lengths.unsqueeze(-1).to(raw.dtype)
        raw_means = (raw * row_mask.unsqueeze(-1)).sum(dim=(1, 2)) / entry_counts
        raw_sq = ((raw - raw_means.view(-1, 1, 1)) ** 2 * row_mask.unsqueeze(-1)).sum(dim=(1, 2))
        text_raw_std = torch.sqrt(raw_sq / entry_counts)

        alpha_flat = alpha.detach()
        if alpha_flat.ndim == 0:
            alpha_flat = alpha_flat.repeat(bsz * n_ch)
        else:
            alpha_flat = alpha_flat.reshape(bsz * n_ch, -1).mean(dim=1)

        return ForecastOutput(
            predictions=predictions,
            ts_tokens=ts_tokens,
            text_tokens_scaled=text_scaled,
            text_pooled_raw=pooled_raw,
            text_raw_std=text_raw_std,
            alpha=alpha_flat,
        )

    def compute_loss(
        self, batch: WindowBatch, lam: float
    ) -> tuple[torch.Tensor, LossBreakdown, ForecastOutput]:
        """Total objective tensor (for backward) plus its exact float breakdown."""
        output = self(batch)
        targets = torch.as_tensor(np.asarray(batch.targets, dtype=np.float64), dtype=self.dtype_)
        task = task_loss(output.predictions, targets)
        series_vec = pool_and_normalize_batch(output.ts_tokens)
        text_vec = pool_and_normalize_batch(output.text_tokens_scaled)
        align = alignment_loss(series_vec, text_vec, self.align_state)
        breakdown = total_loss(float(task.detach()), float(align.detach()), lam)
        return task + lam * align, breakdown, output


@dataclass(frozen=True)
class ParamCounts:
    total: int
    trainable: int

    @property
    def fraction(self) -> float:
        return self.trainable / self.total if self.total else 0.0


def count_params(model: DualBranchForecaster) -> ParamCounts:
    """Exact parameter accounting: module parameters plus the frozen backbone."""
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    own_total = sum(p.numel() for p in model.parameters())
    return ParamCounts(total=own_total + model.backend.frozen_parameter_count(), trainable=trainable)
