"""Text branch: window statistics, prompt rendering, frozen-LLM encoding.

Each channel instance is summarized into a short templated prompt (min, max,
median, trend, strongest autocorrelation lags), embedded through the frozen
word-embedding table, prefixed with shared learnable prompt rows, and pushed
through the causal backend. Only the learnable rows train.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backends import TextBackend
from .errors import ConfigError, PromptOverflowError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_TEMPLATE = (
    "{dataset_description} "
    "Forecast the next {horizon} steps given the previous {lookback} steps. "
    "Input statistics: min value {min}, max value {max}, median value {median}, "
    "the trend is {trend}, top 5 lags are {lags}."
)

DATASET_DESCRIPTIONS = {
    "etth1": "The ETTh1 dataset records hourly electricity transformer measurements.",
    "etth2": "The ETTh2 dataset records hourly electricity transformer measurements.",
    "ettm1": "The ETTm1 dataset records 15-minute electricity transformer measurements.",
    "ettm2": "The ETTm2 dataset records 15-minute electricity transformer measurements.",
    "weather": "The Weather dataset records meteorological indicators sampled every 10 minutes.",
    "exchange": "The Exchange dataset records daily exchange rates of eight countries.",
}


@dataclass(frozen=True)
class StatSummary:
    min_value: float
    max_value: float
    median_value: float
    trend: str  # upward | downward | flat
    top_lags: tuple[int, ...]

    def __post_init__(self):
        if not (self.min_value <= self.median_value <= self.max_value):
            raise ShapeError("summary violates min <= median <= max")
        if self.trend not in ("upward", "downward", "flat"):
            raise ShapeError(f"unknown trend {self.trend!r}")


@dataclass(frozen=True)
class PromptText:
    text: str
    token_ids: tuple[int, ...]


def top_lags(window: np.ndarray, k: int = 5) -> tuple[int, ...]:
    """The k lags with the strongest mean-removed circular autocorrelation.

    The autocorrelation is computed with an FFT (spectrum times conjugate,
    inverse transformed). Lag 0 is excluded; candidates run up to floor(L/2)
    since the circular function is symmetric, extended to k when the window
    is short. Ties break toward the smaller lag, so constant windows return
    (1, .., k).
    """
    window = np.asarray(window, dtype=np.float64)
    length = window.shape[-1]
    if length < k + 1:
        raise ConfigError(f"window of length {length} cannot support top-{k} lags")
    centered = window - window.mean()
    spectrum = np.fft.fft(centered)
    autocorr = np.fft.ifft(spectrum * np.conj(spectrum)).real
    max_lag = min(length - 1, max(length // 2, k))
    candidates = np.arange(1, max_lag + 1)
    order = sorted(candidates, key=lambda lag: (-autocorr[lag], lag))
    return tuple(int(lag) for lag in order[:k])


def summarize(window: np.ndarray, k_lags: int = 5) -> StatSummary:
    """Descriptive statistics of a single channel window."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1:
        raise ShapeError(f"expected a 1-d window, got shape {window.shape}")
    if window.shape[0] < k_lags + 1:
        raise ConfigError(f"window too short ({window.shape[0]}) for top-{k_lags} lags")
    diff_sum = float(np.sum(np.diff(window)))
    trend = "flat" if diff_sum == 0.0 else ("upward" if diff_sum > 0 else "downward")
    return StatSummary(
        min_value=float(window.min()),
        max_value=float(window.max()),
        median_value=float(np.median(window)),
        trend=trend,
        top_lags=top_lags(window, k_lags),
    )


def _fmt(value: float) -> str:
    return f"{value:.4g}"


def describe_dataset(name: str) -> str:
    return DATASET_DESCRIPTIONS.get(
        name.lower(), f"The {name} dataset is a multivariate time series."
    )


def render_prompt(
    summary: StatSummary,
    dataset_name: str,
    lookback: int,
    horizon: int,
    backend: TextBackend,
    template: str = DEFAULT_TEMPLATE,
    n_learn: int = 0,
) -> PromptText:
    """Fill the template, tokenize, and enforce the context budget.

    Real values carry 4 significant digits; rendering is deterministic given
    the summary and metadata.
    """
    text = template.format(
        dataset_description=describe_dataset(dataset_name),
        lookback=lookback,
        horizon=horizon,
        min=_fmt(summary.min_value),
        max=_fmt(summary.max_value),
        median=_fmt(summary.median_value),
        trend=summary.trend,
        lags=", ".join(str(lag) for lag in summary.top_lags),
    )
    ids = tuple(backend.tokenize(text))
    if len(ids) + n_learn > backend.context_length:
        raise PromptOverflowError(
            f"prompt of {len(ids)} tokens plus {n_learn} learnable rows exceeds "
            f"context {backend.context_length}"
        )
    return PromptText(text=text, token_ids=ids)


def load_template(path: str | Path) -> str:
    """Read an override template; it must use the same named slots."""
    template = Path(path).read_text(encoding="utf-8").strip()
    required = ("{min}", "{max}", "{median}", "{trend}", "{lags}")
    missing = [slot for slot in required if slot not in template]
    if missing:
        raise ConfigError(f"template missing slots: {missing}")
    return template


class LearnablePromptTable(nn.Module):
    """Shared trainable prompt rows prepended to every statistical embedding."""

    def __init__(self, n_learn: int, d_llm: int, init_std: float):
        super().__init__()
        if n_learn < 0:
            raise ConfigError("n_learn must be >= 0")
        self.n_learn = n_learn
        self.values = nn.Parameter(torch.randn(n_learn, d_llm) * init_std)


def compose_prompt(learnable: torch.Tensor, stat_emb: torch.Tensor) -> torch.Tensor:
    """Row-concatenate [learnable; statistical] embeddings."""
    if learnable.shape[-1] != stat_emb.shape[-1]:
        raise ShapeError(
            f"hidden width mismatch: learnable {learnable.shape[-1]} vs stats {stat_emb.shape[-1]}"
        )
    return torch.cat([learnable, stat_emb], dim=0)


class TextBranch(nn.Module):
    """Builds and encodes one prompt per channel instance.

    Prompt statistics depend only on the window contents, so token ids are
    cached keyed by the raw window bytes; cached and fresh paths are
    bit-identical by construction.
    """

    def __init__(
        self,
        backend: TextBackend,
        dataset_name: str,
        lookback: int,
        horizon: int,
        n_learn: int = 8,
        template: str = DEFAULT_TEMPLATE,
        cache_size: int = 200_000,
    ):
        super().__init__()
        self.backend = backend
        self.dataset_name = dataset_name
        self.lookback = lookback
        self.horizon = horizon
        self.template = template
        self.prompt_table = LearnablePromptTable(n_learn, backend.d_llm, backend.embedding_std())
        self._token_cache: dict[bytes, tuple[int, ...]] = {}
        self._cache_size = cache_size

    @property
    def n_learn(self) -> int:
        return self.prompt_table.n_learn

    def prompt_token_ids(self, window: np.ndarray) -> tuple[int, ...]:
        key = hashlib.blake2b(np.ascontiguousarray(window).tobytes(), digest_size=16).digest()
        ids = self._token_cache.get(key)
        if ids is None:
            prompt = render_prompt(
                summarize(window),
                self.dataset_name,
                self.lookback,
                self.horizon,
                self.backend,
                template=self.template,
                n_learn=self.n_learn,
            )
            ids = prompt.token_ids
            if len(self._token_cache) < self._cache_size:
                self._token_cache[key] = ids
        return ids

    def forward(self, raw_windows: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
        """Encode (M, L) raw channel windows into (M, T_max, d_llm) plus lengths.

        Sequences are right-padded to the longest prompt in the batch; the
        returned lengths mark each instance's real token count (learnable
        rows included) so callers can slice the causal tail.
        """
        if raw_windows.ndim != 2:
            raise ShapeError(f"expected (M, L) raw windows, got {raw_windows.shape}")
        table = self.prompt_table.values
        dtype = table.dtype
        sequences = []
        for window in raw_windows:
            ids = self.prompt_token_ids(window)
            stat_emb = self.backend.embed_tokens(ids).to(dtype)
            sequences.append(compose_prompt(table, stat_emb))
        lengths = torch.as_tensor([s.shape[0] for s in sequences], dtype=torch.long)
        t_max = int(lengths.max())
        padded = torch.stack(
            [
                torch.cat([seq, seq.new_zeros(t_max - seq.shape[0], seq.shape[1])], dim=0)
                for seq in sequences
            ]
        )
        encoded = self.backend.encode(padded, lengths)
        return encoded, lengths
