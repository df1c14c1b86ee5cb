import numpy as np
import pytest
import torch

from duocast.backends import StubBackend
from duocast.config import RunConfig
from duocast.model import DualBranchForecaster, ModelConfig
from duocast.synthetic import make_sine_table


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def sine_table():
    return make_sine_table(name="synthetic", length=600, n_channels=3, period=24, seed=11)


@pytest.fixture
def csv_factory(tmp_path):
    def write(rows, name="data.csv", header="date,a,b"):
        path = tmp_path / name
        path.write_text("\n".join([header] + rows) + "\n")
        return path

    return write


def tiny_model_config(**overrides) -> ModelConfig:
    defaults = dict(
        lookback=32,
        horizon=8,
        n_channels=2,
        patch_len=8,
        stride=4,
        d_model=6,
        d_llm=16,
        n_learn=4,
        dataset_name="synthetic",
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


def tiny_model(
    seed=0, dtype=torch.float32, backend_layers=2, backend_seed=None, **overrides
) -> DualBranchForecaster:
    cfg = tiny_model_config(**overrides)
    torch.manual_seed(seed)
    backend = StubBackend(
        d_llm=cfg.d_llm,
        layer_count=backend_layers,
        seed=seed if backend_seed is None else backend_seed,
        dtype=dtype,
    )
    return DualBranchForecaster(cfg, backend, dtype=dtype)


def tiny_run_config(dataset_path, **overrides) -> RunConfig:
    from pathlib import Path

    defaults = dict(
        dataset_path=str(dataset_path),
        dataset_name="synthetic",
        split_convention="ratio_70_10_20",
        lookback=48,
        horizon=12,
        patch_len=8,
        stride=4,
        d_model=6,
        d_llm=16,
        n_learn=4,
        llm_layers=2,
        epochs=2,
        batch_size=32,
        seeds=(1,),
        out_dir=str(Path(dataset_path).parent / "out"),
    )
    defaults.update(overrides)
    return RunConfig(**defaults)
