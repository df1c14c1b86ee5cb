"""Experiment configuration: defaults, YAML loading, fingerprints, ablations.

A RunConfig is validated eagerly at construction; the fingerprint is a sha256
over the canonical JSON form and identifies a run in every emitted result.
Ablation flags are resolved into ordinary field overrides by ``effective()``,
so an ablated run and its manually configured twin share one code path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError
from .model import ModelConfig
from .text_branch import DEFAULT_TEMPLATE, load_template
from .training import TrainerSettings
from .ts_branch import compute_patch_count

ABLATION_CHOICES = ("scale", "align", "learnable-prompt", "scale+align")
BACKENDS = ("stub", "pretrained")
CONVENTIONS = ("auto", "ett_hourly", "ett_minutely", "ratio_70_10_20")


def normalize_ablations(flags) -> tuple[str, ...]:
    """Expand compound flags and sort; result uses only elementary names."""
    expanded: set[str] = set()
    for flag in flags or ():
        if flag not in ABLATION_CHOICES:
            raise ConfigError(f"unknown ablation {flag!r}; choose from {ABLATION_CHOICES}")
        if flag == "scale+align":
            expanded.update(("scale", "align"))
        else:
            expanded.add(flag)
    return tuple(sorted(expanded))


@dataclass(frozen=True)
class RunConfig:
    dataset_path: str
    dataset_name: str = ""
    split_convention: str = "auto"
    expected_channels: int | None = None
    lookback: int = 512
    horizon: int = 96
    patch_len: int = 16
    stride: int = 8
    d_model: int = 16
    d_llm: int = 768
    n_learn: int = 8
    lam: float = 1.0
    n_e_override: int | None = None
    backend: str = "stub"
    llm_layers: int = 6
    llm_weights_dir: str | None = None
    llm_random_init: bool = False
    head: str = "full"
    head_rank: int = 32
    lr: float = 1e-3
    epochs: int = 10
    patience: int = 10
    batch_size: int = 32
    seeds: tuple[int, ...] = (2021, 2022, 2023)
    few_shot_ratio: float | None = None
    ablate: tuple[str, ...] = ()
    out_dir: str = "runs"
    stats_on_raw: bool = True
    per_feature_std: bool = False
    force_alpha: float | None = None
    learnable_position: bool = False
    revin_affine: bool = True
    template_path: str | None = None

    def __post_init__(self):
        if not self.dataset_path:
            raise ConfigError("dataset_path is required")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "ablate", normalize_ablations(self.ablate))
        if not self.dataset_name:
            object.__setattr__(self, "dataset_name", Path(self.dataset_path).stem)
        if self.split_convention not in CONVENTIONS:
            raise ConfigError(f"split_convention must be one of {CONVENTIONS}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.lookback < self.patch_len:
            raise ConfigError(f"lookback {self.lookback} < patch_len {self.patch_len}")
        if min(self.horizon, self.stride, self.d_model, self.d_llm, self.llm_layers) < 1:
            raise ConfigError("horizon, stride, d_model, d_llm, llm_layers must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.n_learn < 0:
            raise ConfigError("n_learn must be >= 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.few_shot_ratio is not None and not (0.0 < self.few_shot_ratio <= 1.0):
            raise ConfigError(f"few_shot_ratio must lie in (0, 1], got {self.few_shot_ratio}")
        n_patches = compute_patch_count(self.lookback, self.patch_len, self.stride)
        if self.n_e_override is not None and not (1 <= self.n_e_override <= n_patches):
            raise ConfigError(
                f"n_e_override {self.n_e_override} outside [1, {n_patches}] "
                f"(use the sweep driver for automatic clamping)"
            )

    @property
    def n_patches(self) -> int:
        return compute_patch_count(self.lookback, self.patch_len, self.stride)

    def canonical_dict(self) -> dict:
        payload = dataclasses.asdict(self)
        payload["seeds"] = list(self.seeds)
        payload["ablate"] = list(self.ablate)
        return payload

    def fingerprint(self) -> str:
        return hashlib.sha256(
            json.dumps(self.canonical_dict(), sort_keys=True).encode()
        ).hexdigest()

    def effective(self) -> "RunConfig":
        """Resolve ablation flags into the field overrides they stand for."""
        kwargs: dict = {"ablate": ()}
        if "align" in self.ablate:
            kwargs["lam"] = 0.0
        if "scale" in self.ablate:
            kwargs["force_alpha"] = 1.0
        if "learnable-prompt" in self.ablate:
            kwargs["n_learn"] = 0
        return dataclasses.replace(self, **kwargs)

    def model_config(self, n_channels: int) -> ModelConfig:
        template = DEFAULT_TEMPLATE
        if self.template_path:
            template = load_template(self.template_path)
        return ModelConfig(
            lookback=self.lookback,
            horizon=self.horizon,
            n_channels=n_channels,
            patch_len=self.patch_len,
            stride=self.stride,
            d_model=self.d_model,
            d_llm=self.d_llm,
            n_learn=self.n_learn,
            head=self.head,
            head_rank=self.head_rank,
            revin_affine=self.revin_affine,
            stats_on_raw=self.stats_on_raw,
            per_feature_std=self.per_feature_std,
            force_alpha=self.force_alpha,
            n_e_override=self.n_e_override,
            learnable_position=self.learnable_position,
            dataset_name=self.dataset_name,
            template=template,
        )

    def trainer_settings(self, seed: int) -> TrainerSettings:
        return TrainerSettings(
            lam=self.lam,
            lr=self.lr,
            epochs=self.epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            seed=seed,
        )


_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}
_ALIASES = {"lambda": "lam"}


def config_from_mapping(mapping: dict) -> RunConfig:
    """Build a RunConfig from a plain dict, rejecting unknown keys."""
    kwargs = {}
    for key, value in mapping.items():
        key = _ALIASES.get(key, key)
        if key not in _FIELD_NAMES:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = value
    if "seeds" in kwargs and isinstance(kwargs["seeds"], (list, tuple)):
        kwargs["seeds"] = tuple(kwargs["seeds"])
    if "ablate" in kwargs and isinstance(kwargs["ablate"], (list, tuple)):
        kwargs["ablate"] = tuple(kwargs["ablate"])
    return RunConfig(**kwargs)


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Read a YAML config file and apply CLI-style overrides on top."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config file must contain a mapping")
    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return config_from_mapping(merged)
