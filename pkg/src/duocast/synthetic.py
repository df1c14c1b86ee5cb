"""Seeded synthetic datasets for tests, demos, and weightless runs."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .data import DatasetTable
from .errors import ConfigError


def make_sine_table(
    name: str = "synthetic",
    length: int = 2000,
    n_channels: int = 3,
    period: int = 24,
    noise_std: float = 0.1,
    seed: int = 7,
) -> DatasetTable:
    """Multi-channel sinusoid plus Gaussian noise, hourly timestamps.

    Channels share the period but differ in amplitude, phase, and offset, so
    per-channel statistics and prompts stay distinguishable.
    """
    if length < period * 2:
        raise ConfigError("length must cover at least two periods")
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    values = np.empty((length, n_channels), dtype=np.float64)
    for c in range(n_channels):
        amplitude = 1.0 + 0.5 * c
        phase = rng.uniform(0, 2 * np.pi)
        offset = rng.uniform(-1.0, 1.0)
        values[:, c] = (
            offset
            + amplitude * np.sin(2 * np.pi * t / period + phase)
            + rng.normal(0.0, noise_std, length)
        )
    timestamps = (
        np.datetime64("2020-01-01T00:00:00") + np.arange(length) * np.timedelta64(1, "h")
    ).astype("datetime64[ns]")
    return DatasetTable(
        name=name,
        timestamps=timestamps,
        values=values,
        channel_names=tuple(f"ch{c}" for c in range(n_channels)),
    )


def write_csv(table: DatasetTable, path: str | Path) -> Path:
    """Write a table in the loader's CSV format (date column + channels)."""
    path = Path(path)
    frame = pd.DataFrame(table.values, columns=list(table.channel_names))
    frame.insert(0, "date", pd.to_datetime(table.timestamps).strftime("%Y-%m-%d %H:%M:%S"))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path
