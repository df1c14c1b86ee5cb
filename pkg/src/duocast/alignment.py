"""Balanced cross-modal alignment: truncation, std scaling, contrastive loss.

Text tokens are cut down to a horizon-dependent tail, rescaled so their
dispersion matches the time-series tokens, then pulled toward their paired
series embedding with a one-directional InfoNCE objective under a learnable
temperature.
"""

from __future__ import annotations

import logging

import torch
from torch import nn

from .errors import ContractError, NormalizationError, ShapeError

logger = logging.getLogger(__name__)

TAU_MIN = 1e-2
TAU_MAX = 1e2
_STD_FLOOR = 1e-8


def truncation_length(n_patches: int, horizon: int, lookback: int) -> int:
    """Number of text tokens to retain: clamp(min(N_P, floor(N_P*H/L)), 1, N_P).

    The floor can reach 0 for very short horizons; downstream pooling needs
    at least one token, hence the lower clamp.
    """
    if n_patches < 1 or horizon < 1 or lookback < 1:
        raise ShapeError("n_patches, horizon, lookback must all be >= 1")
    n_e = min(n_patches, (n_patches * horizon) // lookback)
    return max(1, min(n_e, n_patches))


def truncate(embedding: torch.Tensor, n_keep: int) -> torch.Tensor:
    """Keep the last ``n_keep`` rows of a (N_T, d) embedding, order preserved."""
    if embedding.ndim != 2:
        raise ShapeError(f"expected (N_T, d), got {tuple(embedding.shape)}")
    n_total = embedding.shape[0]
    if n_keep > n_total:
        logger.warning("truncation length %d exceeds %d available tokens; clamping", n_keep, n_total)
        n_keep = n_total
    return embedding[n_total - n_keep :]


def truncate_batch(encoded: torch.Tensor, lengths: torch.Tensor, n_keep: int) -> torch.Tensor:
    """Vectorized tail slice over right-padded (M, T, d) sequences."""
    if encoded.ndim != 3:
        raise ShapeError(f"expected (M, T, d), got {tuple(encoded.shape)}")
    if int(lengths.min()) < n_keep:
        logger.warning(
            "truncation length %d exceeds the shortest prompt (%d tokens); clamping",
            n_keep,
            int(lengths.min()),
        )
        n_keep = int(lengths.min())
    offsets = lengths - n_keep  # (M,)
    rows = offsets.unsqueeze(1) + torch.arange(n_keep, device=encoded.device).unsqueeze(0)
    index = rows.unsqueeze(-1).expand(-1, -1, encoded.shape[-1])
    return torch.gather(encoded, 1, index)


def _flat_std(matrix: torch.Tensor) -> torch.Tensor:
    return matrix.reshape(-1).std(correction=0)


def scaling_factor(
    text_tokens: torch.Tensor,
    ts_tokens: torch.Tensor,
    per_feature: bool = False,
) -> torch.Tensor:
    """Dispersion ratio std(series tokens) / std(text tokens), gradient-detached.

    By default both stds collapse to one scalar per instance over every
    token-by-feature entry; ``per_feature`` keeps a d-dimensional ratio
    instead. Degenerate text dispersion falls back to a factor of 1.
    """
    if text_tokens.numel() == 0 or ts_tokens.numel() == 0:
        raise ShapeError("cannot scale empty embeddings")
    if per_feature:
        std_text = text_tokens.std(dim=-2, correction=0)
        std_time = ts_tokens.std(dim=-2, correction=0)
    else:
        std_text = _flat_std(text_tokens)
        std_time = _flat_std(ts_tokens)
    alpha = std_time / std_text
    degenerate = std_text < _STD_FLOOR
    if bool(degenerate.any() if per_feature else degenerate):
        logger.warning("text embedding std below %.0e; scaling factor forced to 1", _STD_FLOOR)
        alpha = torch.where(degenerate, torch.ones_like(alpha), alpha)
    return alpha.detach()


def scaling_factor_batch(
    text_tokens: torch.Tensor,
    ts_tokens: torch.Tensor,
    per_feature: bool = False,
) -> torch.Tensor:
    """Per-instance scaling factors for (M, rows, d) stacks, broadcastable."""
    if text_tokens.ndim != 3 or ts_tokens.ndim != 3:
        raise ShapeError("expected (M, rows, d) stacks")
    if per_feature:
        std_text = text_tokens.std(dim=1, keepdim=True, correction=0)
        std_time = ts_tokens.std(dim=1, keepdim=True, correction=0)
    else:
        std_text = text_tokens.flatten(1).std(dim=1, correction=0).reshape(-1, 1, 1)
        std_time = ts_tokens.flatten(1).std(dim=1, correction=0).reshape(-1, 1, 1)
    alpha = std_time / std_text
    degenerate = std_text < _STD_FLOOR
    if bool(degenerate.any()):
        logger.warning("text embedding std below %.0e; scaling factor forced to 1", _STD_FLOOR)
        alpha = torch.where(degenerate, torch.ones_like(alpha), alpha)
    return alpha.detach()


def scale(text_tokens: torch.Tensor, alpha: torch.Tensor | float) -> torch.Tensor:
    """Apply the scaling factor elementwise."""
    return text_tokens * alpha


def pool_and_normalize(tokens: torch.Tensor) -> torch.Tensor:
    """Mean over the token rows, then l2 normalization to a unit vector."""
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ShapeError(f"expected a nonempty (rows, d) matrix, got {tuple(tokens.shape)}")
    pooled = tokens.mean(dim=0)
    norm = pooled.norm()
    if float(norm.detach()) == 0.0:
        raise NormalizationError("pooled embedding has zero norm")
    return pooled / norm


def pool_and_normalize_batch(tokens: torch.Tensor) -> torch.Tensor:
    """Batched (M, rows, d) variant of pool_and_normalize."""
    pooled = tokens.mean(dim=1)
    norms = pooled.norm(dim=-1, keepdim=True)
    if float(norms.detach().min()) == 0.0:
        raise NormalizationError("pooled embedding has zero norm")
    return pooled / norms


class AlignmentState(nn.Module):
    """Learnable log-temperature; tau = exp(theta) clamped to [1e-2, 1e2]."""

    def __init__(self, theta_init: float = 0.0):
        super().__init__()
        self.theta = nn.Parameter(torch.tensor(float(theta_init)))

    def tau(self) -> torch.Tensor:
        return torch.exp(self.theta).clamp(TAU_MIN, TAU_MAX)


def alignment_loss(
    ts_vectors: torch.Tensor,
    text_vectors: torch.Tensor,
    state: AlignmentState,
) -> torch.Tensor:
    """One-directional InfoNCE over K (series, text) unit-vector pairs.

    Series vectors act as queries, text vectors as keys; pair i is the
    positive for row i and every other key is a negative. Computed with a
    numerically stabilized log-softmax.
    """
    if ts_vectors.shape != text_vectors.shape or ts_vectors.ndim != 2:
        raise ShapeError(
            f"expected matching (K, d) stacks, got {tuple(ts_vectors.shape)} and "
            f"{tuple(text_vectors.shape)}"
        )
    if ts_vectors.shape[0] < 1:
        raise ShapeError("need at least one pair")
    for name, vecs in (("series", ts_vectors), ("text", text_vectors)):
        err = float((vecs.detach().norm(dim=-1) - 1.0).abs().max())
        if err > 1e-4:
            raise ContractError(f"{name} vectors are not unit-norm (max deviation {err:.2e})")
    logits = ts_vectors @ text_vectors.T / state.tau()
    log_probs = torch.log_softmax(logits, dim=1)
    return -log_probs.diagonal().mean()
