"""Experiment drivers: seeded runs, sweeps, reports, and embedding exports.

Every run is identified by its config fingerprint; results are written as a
flat per-seed CSV plus a nested seed-averaged JSON, both with deterministic
ordering so reruns on the same results are byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backends import build_backend
from .config import RunConfig
from .data import PreparedData, load_dataset, prepare, slice_batch
from .errors import ConfigError, DuocastError
from .model import DualBranchForecaster, ForecastOutput, count_params
from .training import evaluate, train_model

logger = logging.getLogger(__name__)

SWEEP_AXES = ("lookback", "text_len", "lambda")


@dataclass
class SeedResult:
    seed: int
    status: str  # ok | diverged | failed
    mse: float | None = None
    mae: float | None = None
    wall_clock: float = 0.0
    best_epoch: int = -1
    train_total_history: list[float] = field(default_factory=list)
    val_mse_history: list[float] = field(default_factory=list)
    error: str | None = None
    checkpoint_path: str | None = None


@dataclass
class RunResult:
    config: RunConfig
    fingerprint: str
    n_channels: int
    params_total: int
    params_trainable: int
    seed_results: list[SeedResult]

    @property
    def ok_seeds(self) -> list[SeedResult]:
        return [s for s in self.seed_results if s.status == "ok"]

    @property
    def avg_mse(self) -> float | None:
        ok = self.ok_seeds
        return float(np.mean([s.mse for s in ok])) if ok else None

    @property
    def avg_mae(self) -> float | None:
        ok = self.ok_seeds
        return float(np.mean([s.mae for s in ok])) if ok else None

    @property
    def ablation_label(self) -> str:
        return "+".join(self.config.ablate) if self.config.ablate else "none"


def build_model(config: RunConfig, n_channels: int, seed: int, dtype=torch.float32) -> DualBranchForecaster:
    """Seeded model construction; the stub backend is keyed by the same seed."""
    effective = config.effective()
    torch.manual_seed(seed)
    backend = build_backend(
        effective.backend,
        d_llm=effective.d_llm,
        layer_count=effective.llm_layers,
        seed=seed,
        weights_dir=effective.llm_weights_dir,
        random_init=effective.llm_random_init,
        dtype=dtype,
    )
    return DualBranchForecaster(effective.model_config(n_channels), backend, dtype=dtype)


def _save_seed_checkpoint(model, config: RunConfig, seed: int) -> str | None:
    from .checkpoint import save_checkpoint

    path = Path(config.out_dir) / f"{config.fingerprint()[:12]}_seed{seed}.ckpt"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, path)
    except OSError as exc:
        logger.warning("could not write checkpoint %s: %s", path, exc)
        return None
    return str(path)


def prepare_data(config: RunConfig) -> PreparedData:
    table = load_dataset(config.dataset_path, config.expected_channels)
    if config.dataset_name != table.name:
        table = dataclasses.replace(table, name=config.dataset_name)
    return prepare(
        table,
        config.split_convention,
        config.lookback,
        config.horizon,
        few_shot_ratio=config.few_shot_ratio,
    )


def run_experiment(config: RunConfig, data: PreparedData | None = None) -> RunResult:
    """Train and evaluate one configuration across its seed list.

    A seed that diverges or errors is recorded with a failure status; the
    remaining seeds still run.
    """
    if data is None:
        data = prepare_data(config)
    n_channels = data.table.n_channels
    effective = config.effective()
    seed_results: list[SeedResult] = []
    params_total = params_trainable = 0
    for seed in config.seeds:
        start = time.perf_counter()
        result = SeedResult(seed=seed, status="ok")
        try:
            model = build_model(config, n_channels, seed)
            counts = count_params(model)
            params_total, params_trainable = counts.total, counts.trainable
            report = train_model(model, data, effective.trainer_settings(seed))
            result.train_total_history = [r.train_total for r in report.history]
            result.val_mse_history = [r.val_mse for r in report.history]
            result.best_epoch = report.best_epoch
            if report.status != "ok":
                result.status = "diverged"
            else:
                mse, mae = evaluate(model, data.table.values, data.test_starts, effective.batch_size)
                result.mse, result.mae = mse, mae
                result.checkpoint_path = _save_seed_checkpoint(model, config, seed)
        except ConfigError:
            raise  # configuration problems are global, not per-seed
        except DuocastError as exc:
            logger.error("seed %d failed: %s", seed, exc)
            result.status = "failed"
            result.error = str(exc)
        result.wall_clock = time.perf_counter() - start
        seed_results.append(result)
    return RunResult(
        config=config,
        fingerprint=config.fingerprint(),
        n_channels=n_channels,
        params_total=params_total,
        params_trainable=params_trainable,
        seed_results=seed_results,
    )


def sweep(base: RunConfig, axis: str, values: list) -> list[RunResult]:
    """One run per value along a single config axis, shared seed set."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep needs at least one value")

    configs: list[RunConfig] = []
    for value in values:
        if axis == "lookback":
            lookback = int(value)
            if lookback < base.patch_len:
                raise ConfigError(f"lookback {lookback} shorter than patch_len {base.patch_len}")
            configs.append(dataclasses.replace(base, lookback=lookback))
        elif axis == "lambda":
            lam = float(value)
            if lam < 0:
                raise ConfigError(f"lambda must be >= 0, got {lam}")
            configs.append(dataclasses.replace(base, lam=lam))
        else:  # text_len
            n_e = int(value)
            if n_e < 1:
                raise ConfigError(f"text_len must be >= 1, got {n_e}")
            if n_e > base.n_patches:
                logger.warning(
                    "text_len %d exceeds the %d available patches; clamping", n_e, base.n_patches
                )
                n_e = base.n_patches
            configs.append(dataclasses.replace(base, n_e_override=n_e))

    data = prepare_data(base) if axis != "lookback" else None
    results = []
    for cfg in configs:
        results.append(run_experiment(cfg, data=None if axis == "lookback" else data))
    return results


CSV_COLUMNS = (
    "dataset",
    "lookback",
    "horizon",
    "seed",
    "mse",
    "mae",
    "params_trainable",
    "params_total",
    "wall_clock",
    "ablation",
    "fingerprint",
)


def _fmt_metric(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def report(results: list[RunResult], out_dir: str | Path) -> tuple[Path, Path]:
    """Write results.csv (per seed) and results.json (seed-averaged)."""
    if not results:
        raise ConfigError("nothing to report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output dir {out_dir}: {exc}") from exc

    ordered = sorted(results, key=lambda r: r.fingerprint)
    csv_path = out_dir / "results.csv"
    lines = [",".join(CSV_COLUMNS)]
    for res in ordered:
        for seed_res in sorted(res.seed_results, key=lambda s: s.seed):
            lines.append(
                ",".join(
                    [
                        res.config.dataset_name,
                        str(res.config.lookback),
                        str(res.config.horizon),
                        str(seed_res.seed),
                        _fmt_metric(seed_res.mse),
                        _fmt_metric(seed_res.mae),
                        str(res.params_trainable),
                        str(res.params_total),
                        f"{seed_res.wall_clock:.3f}",
                        res.ablation_label,
                        res.fingerprint,
                    ]
                )
            )
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    json_path = out_dir / "results.json"
    payload = {"runs": []}
    for res in ordered:
        payload["runs"].append(
            {
                "fingerprint": res.fingerprint,
                "dataset": res.config.dataset_name,
                "lookback": res.config.lookback,
                "horizon": res.config.horizon,
                "lambda": res.config.lam,
                "ablation": res.ablation_label,
                "few_shot_ratio": res.config.few_shot_ratio,
                "params": {
                    "total": res.params_total,
                    "trainable": res.params_trainable,
                    "fraction": res.params_trainable / res.params_total if res.params_total else None,
                },
                "avg": {"mse": res.avg_mse, "mae": res.avg_mae},
                "seeds": [
                    {
                        "seed": s.seed,
                        "status": s.status,
                        "mse": s.mse,
                        "mae": s.mae,
                        "wall_clock": round(s.wall_clock, 3),
                        "best_epoch": s.best_epoch,
                        "checkpoint": s.checkpoint_path,
                    }
                    for s in sorted(res.seed_results, key=lambda s: s.seed)
                ],
            }
        )
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


EXPORT_KINDS = ("text_raw", "text_scaled", "ts")


def export_embeddings(model: DualBranchForecaster, batch, path: str | Path) -> Path:
    """Write pooled per-instance embeddings of all three kinds to a CSV.

    Each instance contributes one row per kind with its scaling factor and
    the std over the full token matrix; text_scaled and ts stds agree by
    construction of the scaling step.
    """
    model.eval()
    with torch.no_grad():
        output: ForecastOutput = model(batch)
    model.train()
    bsz = batch.inputs.shape[0]
    n_ch = batch.inputs.shape[2]
    d = model.config.d_llm

    pooled = {
        "text_raw": output.text_pooled_raw.double().cpu().numpy(),
        "text_scaled": output.text_tokens_scaled.detach().mean(dim=1).double().cpu().numpy(),
        "ts": output.ts_tokens.detach().mean(dim=1).double().cpu().numpy(),
    }
    stds = {
        "text_raw": output.text_raw_std.double().cpu().numpy(),
        "text_scaled": output.text_std.double().cpu().numpy(),
        "ts": output.ts_std.double().cpu().numpy(),
    }
    alpha = output.alpha.double().cpu().numpy()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["kind", "batch_index", "channel", "alpha", "matrix_std"] + [f"e{j}" for j in range(d)]
    lines = [",".join(header)]
    for kind in EXPORT_KINDS:
        for idx in range(bsz * n_ch):
            row = [
                kind,
                str(idx // n_ch),
                str(idx % n_ch),
                f"{alpha[idx]:.9g}",
                f"{stds[kind][idx]:.9g}",
            ]
            row.extend(f"{v:.9g}" for v in pooled[kind][idx])
            lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def pca_project(matrix: np.ndarray, n_components: int = 2) -> np.ndarray:
    """Project rows onto the top principal components (SVD based)."""
    centered = matrix - matrix.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:n_components].T


def plot_pca(embeddings_csv: str | Path, out_path: str | Path) -> Path:
    """Scatter the 2-component PCA of the exported embeddings, one color per kind."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import pandas as pd

    frame = pd.read_csv(embeddings_csv)
    dim_cols = [c for c in frame.columns if c.startswith("e")]
    projected = pca_project(frame[dim_cols].to_numpy(dtype=np.float64))
    fig, ax = plt.subplots(figsize=(6, 5))
    colors = {"text_raw": "tab:blue", "text_scaled": "tab:green", "ts": "tab:orange"}
    for kind in EXPORT_KINDS:
        mask = (frame["kind"] == kind).to_numpy()
        ax.scatter(projected[mask, 0], projected[mask, 1], s=14, alpha=0.7,
                   label=kind, color=colors[kind])
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def export_batch(data: PreparedData, config: RunConfig, max_instances: int = 64):
    """A deterministic evaluation batch used by the embedding export command."""
    starts = data.test_starts or data.val_starts or data.train_starts
    if not starts:
        raise ConfigError("no windows available for embedding export")
    n_ch = data.table.n_channels
    n_windows = max(1, min(len(starts), max_instances // max(1, n_ch)))
    return slice_batch(data.table.values, starts[:n_windows], config.lookback, config.horizon)
