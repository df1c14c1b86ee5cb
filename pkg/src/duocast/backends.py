"""Frozen text encoder backends.

Two interchangeable backends sit behind the text branch:

* ``PretrainedBackend`` wraps a local GPT-2 checkpoint (decoder-only, causal),
  weights frozen, gradients still flowing through to the input embeddings.
* ``StubBackend`` is a deterministic, dependency-free stand-in for CI: a
  seeded embedding table plus strictly-causal exponential-decay mixing. It
  preserves the contracts the alignment math relies on (fixed hidden width,
  causal context accumulation, frozen weights) without any model files.
"""

from __future__ import annotations

import hashlib
import re
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, EncodingError, PromptOverflowError

_WORDISH = re.compile(r"[A-Za-z]+|\d|[^\sA-Za-z\d]")


class TextBackend:
    """Common surface of the frozen encoders; see subclasses for semantics."""

    name: str = "base"
    d_llm: int
    layer_count: int
    vocab_size: int
    context_length: int

    def tokenize(self, text: str) -> list[int]:
        raise NotImplementedError

    def embed_tokens(self, token_ids: list[int]) -> torch.Tensor:
        raise NotImplementedError

    def encode(self, embeds: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def fingerprint(self) -> str:
        raise NotImplementedError

    def frozen_parameter_count(self) -> int:
        raise NotImplementedError

    def embedding_std(self) -> float:
        raise NotImplementedError

    def _check_ids(self, token_ids) -> None:
        for tid in token_ids:
            if not (0 <= tid < self.vocab_size):
                raise EncodingError(f"token id {tid} outside vocabulary of size {self.vocab_size}")


class StubBackend(TextBackend):
    """Seeded causal mixer used in tests and weightless runs.

    Token embeddings are pseudo-random rows keyed by (seed, token id), so two
    processes with the same seed produce identical encodings. Each "layer"
    replaces row t with a normalized exp-decay average over rows <= t, which
    keeps the encoder strictly causal and leaves gradients flowing to the
    inputs while the table itself never trains.
    """

    name = "stub"

    def __init__(
        self,
        d_llm: int = 768,
        layer_count: int = 6,
        seed: int = 0,
        decay: float = 0.8,
        init_std: float = 0.02,
        vocab_size: int = 50257,
        context_length: int = 1024,
        dtype: torch.dtype = torch.float32,
    ):
        if not (0.0 < decay < 1.0):
            raise ConfigError(f"decay must lie in (0, 1), got {decay}")
        self.d_llm = d_llm
        self.layer_count = layer_count
        self.seed = seed
        self.decay = decay
        self.init_std = init_std
        self.vocab_size = vocab_size
        self.context_length = context_length
        self.dtype = dtype
        self._rows: dict[int, np.ndarray] = {}
        self._mix_cache: dict[int, torch.Tensor] = {}

    def tokenize(self, text: str) -> list[int]:
        ids = []
        for piece in _WORDISH.findall(text):
            digest = hashlib.blake2b(piece.encode("utf-8"), digest_size=4).digest()
            ids.append(int.from_bytes(digest, "little") % self.vocab_size)
        return ids

    def _row(self, token_id: int) -> np.ndarray:
        row = self._rows.get(token_id)
        if row is None:
            digest = hashlib.blake2b(
                f"{self.seed}|{token_id}".encode(), digest_size=8
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            row = rng.normal(0.0, self.init_std, self.d_llm)
            self._rows[token_id] = row
        return row

    def embed_tokens(self, token_ids) -> torch.Tensor:
        self._check_ids(token_ids)
        rows = np.stack([self._row(t) for t in token_ids]) if len(token_ids) else np.zeros((0, self.d_llm))
        return torch.as_tensor(rows, dtype=self.dtype)

    def _mixer(self, seq_len: int, dtype: torch.dtype) -> torch.Tensor:
        key = seq_len * 100 + {torch.float32: 0, torch.float64: 1}.get(dtype, 2)
        mix = self._mix_cache.get(key)
        if mix is None:
            t = torch.arange(seq_len, dtype=torch.float64)
            delta = t.unsqueeze(1) - t.unsqueeze(0)  # t - s, causal where >= 0
            weights = torch.tensor(self.decay, dtype=torch.float64) ** delta.clamp(min=0)
            mix = torch.where(delta >= 0, weights, torch.zeros((), dtype=torch.float64))
            mix = mix / mix.sum(dim=1, keepdim=True)
            mix = mix.to(dtype)
            self._mix_cache[key] = mix
        return mix

    def encode(self, embeds: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        if embeds.shape[1] > self.context_length:
            raise PromptOverflowError(
                f"sequence length {embeds.shape[1]} exceeds context {self.context_length}"
            )
        mix = self._mixer(embeds.shape[1], embeds.dtype)
        out = embeds
        for _ in range(self.layer_count):
            out = torch.einsum("ts,bsd->btd", mix, out)
        return out

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(
            f"stub|{self.seed}|{self.d_llm}|{self.layer_count}|{self.decay}|{self.init_std}".encode()
        )
        for tid in range(256):
            h.update(np.ascontiguousarray(self._row(tid)).tobytes())
        return h.hexdigest()

    def frozen_parameter_count(self) -> int:
        # the conceptual frozen weight set: the full lazy embedding table
        return self.vocab_size * self.d_llm

    def embedding_std(self) -> float:
        return self.init_std


class PretrainedBackend(TextBackend):
    """Frozen decoder-only transformer loaded from a local weights directory.

    ``weights_dir`` must hold a GPT-2 style checkpoint plus tokenizer files.
    With ``random_init=True`` the architecture is built without weights, which
    is enough for parameter accounting and freezing-contract checks but not
    for forecasting quality.
    """

    name = "pretrained"

    def __init__(
        self,
        weights_dir: str | Path | None,
        layer_count: int = 6,
        random_init: bool = False,
        dtype: torch.dtype = torch.float32,
        config_overrides: dict | None = None,
    ):
        from transformers import GPT2Config, GPT2Model

        if weights_dir is None and not random_init:
            raise ConfigError(
                "pretrained backend needs llm_weights_dir (or random_init for architecture-only use)"
            )
        if weights_dir is not None:
            weights_dir = Path(weights_dir)
            if not weights_dir.exists():
                raise ConfigError(f"llm_weights_dir does not exist: {weights_dir}")
            self.model = GPT2Model.from_pretrained(str(weights_dir), n_layer=layer_count)
            from transformers import GPT2TokenizerFast

            self._tokenizer = GPT2TokenizerFast.from_pretrained(str(weights_dir))
        else:
            self.model = GPT2Model(GPT2Config(n_layer=layer_count, **(config_overrides or {})))
            self._tokenizer = None
        self.model.to(dtype)
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.layer_count = layer_count
        self.d_llm = self.model.config.n_embd
        self.vocab_size = self.model.config.vocab_size
        self.context_length = self.model.config.n_positions
        self.dtype = dtype
        self._emb_std: float | None = None

    def tokenize(self, text: str) -> list[int]:
        if self._tokenizer is None:
            # random-init mode has no tokenizer files; fall back to the stub rule
            ids = []
            for piece in _WORDISH.findall(text):
                digest = hashlib.blake2b(piece.encode("utf-8"), digest_size=4).digest()
                ids.append(int.from_bytes(digest, "little") % self.vocab_size)
            return ids
        return self._tokenizer(text)["input_ids"]

    def embed_tokens(self, token_ids) -> torch.Tensor:
        self._check_ids(token_ids)
        ids = torch.as_tensor(list(token_ids), dtype=torch.long)
        with torch.no_grad():
            return self.model.wte(ids).clone()

    def encode(self, embeds: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        seq_len = embeds.shape[1]
        if seq_len > self.context_length:
            raise PromptOverflowError(
                f"sequence length {seq_len} exceeds context {self.context_length}"
            )
        positions = torch.arange(seq_len).unsqueeze(0)
        mask = (positions < lengths.unsqueeze(1)).long()
        out = self.model(inputs_embeds=embeds, attention_mask=mask)
        return out.last_hidden_state

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        state = self.model.state_dict()
        for name in sorted(state):
            h.update(name.encode())
            h.update(state[name].detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def frozen_parameter_count(self) -> int:
        return sum(p.numel() for p in self.model.parameters())

    def embedding_std(self) -> float:
        if self._emb_std is None:
            self._emb_std = float(self.model.wte.weight.std())
        return self._emb_std


def build_backend(
    backend: str,
    d_llm: int = 768,
    layer_count: int = 6,
    seed: int = 0,
    weights_dir: str | Path | None = None,
    random_init: bool = False,
    dtype: torch.dtype = torch.float32,
) -> TextBackend:
    """Construct a backend by name; 'stub' needs no files, 'pretrained' does."""
    if backend == "stub":
        return StubBackend(d_llm=d_llm, layer_count=layer_count, seed=seed, dtype=dtype)
    if backend == "pretrained":
        be = PretrainedBackend(
            weights_dir=weights_dir, layer_count=layer_count, random_init=random_init, dtype=dtype
        )
        if be.d_llm != d_llm:
            raise ConfigError(
                f"config d_llm={d_llm} does not match backbone hidden size {be.d_llm}"
            )
        return be
    raise ConfigError(f"unknown backend {backend!r}; use 'stub' or 'pretrained'")
