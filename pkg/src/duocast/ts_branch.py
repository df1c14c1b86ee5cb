"""Time series branch: reversible instance normalization, patching, embedding.

Each channel of a look-back window is treated as an independent instance:
normalize, cut into overlapping patches, embed each patch linearly, and map
into the hidden width of the text backbone. All weights are shared across
channels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class NormState:
    """Per-instance statistics captured by normalize() and undone by denormalize()."""

    mean: torch.Tensor   # (B, 1, N)
    stdev: torch.Tensor  # (B, 1, N), >= sqrt(eps)
    constant_mask: torch.Tensor | None = None  # (B, N) bool, true where the window was flat


class RevIN(nn.Module):
    """Reversible instance normalization with optional per-channel affine.

    Statistics use the population (biased) standard deviation, stabilized by
    ``sqrt(var + eps)`` so constant windows map to zeros instead of failing.
    """

    def __init__(self, num_channels: int, eps: float = 1e-5, affine: bool = True):
        super().__init__()
        self.num_channels = num_channels
        self.eps = eps
        self.affine = affine
        if affine:
            self.affine_weight = nn.Parameter(torch.ones(num_channels))
            self.affine_bias = nn.Parameter(torch.zeros(num_channels))

    def normalize(self, x: torch.Tensor) -> tuple[torch.Tensor, NormState]:
        if x.ndim != 3:
            raise ShapeError(f"expected (B, L, N), got {tuple(x.shape)}")
        if x.shape[1] < 2:
            raise ConfigError("instance normalization needs a window of length >= 2")
        mean = x.mean(dim=1, keepdim=True).detach()
        var = x.var(dim=1, keepdim=True, unbiased=False)
        stdev = torch.sqrt(var + self.eps).detach()
        constant = (var <= self.eps).squeeze(1).detach()
        if bool(constant.any()):
            logger.debug("constant window(s) in batch; std clamped to sqrt(eps)")
        out = (x - mean) / stdev
        if self.affine:
            out = out * self.affine_weight + self.affine_bias
        return out, NormState(mean=mean, stdev=stdev, constant_mask=constant)

    def denormalize(self, y: torch.Tensor, state: NormState) -> torch.Tensor:
        if y.ndim != 3 or y.shape[2] != state.mean.shape[2]:
            raise ShapeError(
                f"forecast shape {tuple(y.shape)} does not match state with "
                f"{state.mean.shape[2]} channels"
            )
        if self.affine:
            y = (y - self.affine_bias) / (self.affine_weight + self.eps * self.eps)
        return y * state.stdev + state.mean


def compute_patch_count(lookback: int, patch_len: int, stride: int) -> int:
    """Number of patches produced from an end-padded series: floor((L-L_P)/S) + 2."""
    if patch_len < 1 or stride < 1:
        raise ConfigError("patch_len and stride must be positive")
    if lookback < patch_len:
        raise ConfigError(f"lookback {lookback} shorter than patch length {patch_len}")
    return (lookback - patch_len) // stride + 2


def extract_patches(series: torch.Tensor, patch_len: int, stride: int) -> torch.Tensor:
    """Cut (..., L) series into (..., N_P, L_P) patches.

    The series is end-padded by repeating its final value ``stride`` times, so
    patch k always starts at index k*stride and the count matches
    compute_patch_count exactly.
    """
    n_patches = compute_patch_count(series.shape[-1], patch_len, stride)
    pad = series[..., -1:].expand(*series.shape[:-1], stride)
    padded = torch.cat([series, pad], dim=-1)
    patches = padded.unfold(dimension=-1, size=patch_len, step=stride)
    return patches[..., :n_patches, :]


class TimeSeriesBranch(nn.Module):
    """Patch + embed + map pipeline producing (M, N_P, d_llm) token matrices."""

    def __init__(
        self,
        lookback: int,
        patch_len: int,
        stride: int,
        d_model: int,
        d_llm: int,
        learnable_position: bool = False,
        patch_encoder: nn.Module | None = None,
    ):
        super().__init__()
        self.lookback = lookback
        self.patch_len = patch_len
        self.stride = stride
        self.n_patches = compute_patch_count(lookback, patch_len, stride)
        self.patch_embed = nn.Linear(patch_len, d_model)
        # optional drop-in for a deeper encoder over the (M, N_P, d_model) tokens
        self.patch_encoder = patch_encoder
        self.position = (
            nn.Parameter(torch.randn(self.n_patches, d_model) * 0.02)
            if learnable_position
            else None
        )
        self.mapper = nn.Linear(d_model, d_llm)

    def forward(self, instances: torch.Tensor) -> torch.Tensor:
        if instances.ndim != 2 or instances.shape[1] != self.lookback:
            raise ShapeError(
                f"expected (M, {self.lookback}) channel instances, got {tuple(instances.shape)}"
            )
        patches = extract_patches(instances, self.patch_len, self.stride)
        emb = self.patch_embed(patches)
        if self.position is not None:
            emb = emb + self.position
        if self.patch_encoder is not None:
            emb = self.patch_encoder(emb)
        return self.mapper(emb)
