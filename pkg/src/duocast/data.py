"""Benchmark CSV ingestion, chronological splits, sliding windows and batching.

The loaders are strict: files must have a ``date`` column followed by numeric
channels, complete values, and a constant sampling interval. Evaluation is
always performed in the dataset-standardized space, with the scaler fitted on
the training range only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, ParseError

logger = logging.getLogger(__name__)

ETT_HOURLY_BOUNDS = (0, 8640, 11520, 14400)
ETT_MINUTELY_BOUNDS = tuple(4 * b for b in ETT_HOURLY_BOUNDS)

SPLIT_CONVENTIONS = ("ett_hourly", "ett_minutely", "ratio_70_10_20")


@dataclass(frozen=True)
class DatasetTable:
    """A fully loaded multivariate series: (T_total, N) values plus metadata."""

    name: str
    timestamps: np.ndarray  # datetime64[ns], strictly increasing, constant step
    values: np.ndarray      # float64, shape (T_total, N)
    channel_names: tuple[str, ...]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    """Half-open row intervals, ordered train < val < test."""

    train_range: tuple[int, int]
    val_range: tuple[int, int]
    test_range: tuple[int, int]

    def __post_init__(self):
        t, v, s = self.train_range, self.val_range, self.test_range
        if not (0 <= t[0] < t[1] <= v[0] < v[1] <= s[0] < s[1]):
            raise ConfigError(f"split ranges must be disjoint and ordered: {t}, {v}, {s}")

    def range_for(self, split: str) -> tuple[int, int]:
        try:
            return {"train": self.train_range, "val": self.val_range, "test": self.test_range}[split]
        except KeyError:
            raise ConfigError(f"unknown split {split!r}") from None

    def windowing_range(self, split: str, lookback: int) -> tuple[int, int]:
        """Range used for window enumeration.

        Evaluation splits are extended backward by lookback-1 rows so the first
        window has a full history; the training range is used as-is.
        """
        lo, hi = self.range_for(split)
        if split == "train":
            return lo, hi
        return max(0, lo - (lookback - 1)), hi


@dataclass(frozen=True)
class ScalerStats:
    """Per-channel standardization statistics fitted on the train range."""

    mean: np.ndarray  # (N,)
    std: np.ndarray   # (N,), all > 0

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class WindowBatch:
    """A minibatch of forecasting instances in standardized units."""

    inputs: np.ndarray   # (B, L, N)
    targets: np.ndarray  # (B, H, N)
    window_start_indices: np.ndarray  # (B,), absolute input-start rows

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DataError("inputs and targets disagree on batch size")
        if self.inputs.shape[2] != self.targets.shape[2]:
            raise DataError("inputs and targets disagree on channel count")


def load_dataset(path: str | Path, expected_channels: int | None = None) -> DatasetTable:
    """Load a benchmark CSV (``date`` column + numeric channels) into a table.

    Rejects missing cells, non-numeric entries and irregular timestamps
    rather than repairing them.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except Exception as exc:  # pandas raises a zoo of parser errors
        raise ParseError(f"could not parse {path}: {exc}") from exc
    if frame.shape[1] < 2:
        raise ParseError(f"{path}: need a date column plus at least one channel")
    date_col = frame.columns[0]
    if date_col.strip().lower() != "date":
        raise ParseError(f"{path}: first column must be named 'date', got {date_col!r}")

    timestamps = pd.to_datetime(frame[date_col], errors="coerce", format="mixed")
    bad = timestamps.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(f"{path}: unparseable timestamp at row {row}: {frame[date_col].iloc[row]!r}")

    channels = frame.columns[1:]
    values = np.empty((len(frame), len(channels)), dtype=np.float64)
    for j, col in enumerate(channels):
        numeric = pd.to_numeric(frame[col], errors="coerce")
        bad = numeric.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            cell = frame[col].iloc[row]
            if isinstance(cell, str) and cell.strip():
                raise ParseError(f"{path}: non-numeric value {cell!r} in column {col!r} at row {row}")
            raise DataError(f"{path}: missing value in column {col!r} at row {row}")
        values[:, j] = numeric.to_numpy(dtype=np.float64)

    ts = timestamps.to_numpy()
    diffs = np.diff(ts)
    if len(diffs) > 0:
        if (diffs <= np.timedelta64(0, "ns")).any():
            row = int(np.flatnonzero(diffs <= np.timedelta64(0, "ns"))[0]) + 1
            raise DataError(f"{path}: timestamps not strictly increasing at row {row}")
        if (diffs != diffs[0]).any():
            row = int(np.flatnonzero(diffs != diffs[0])[0]) + 1
            raise DataError(f"{path}: sampling interval changes at row {row}")

    if expected_channels is not None and len(channels) != expected_channels:
        raise ConfigError(
            f"{path}: expected {expected_channels} channels, file has {len(channels)}"
        )
    return DatasetTable(
        name=path.stem,
        timestamps=ts,
        values=values,
        channel_names=tuple(str(c) for c in channels),
    )


def infer_convention(dataset_name: str) -> str:
    """Map a dataset name to its community split convention."""
    lowered = dataset_name.lower()
    if lowered.startswith("etth"):
        return "ett_hourly"
    if lowered.startswith("ettm"):
        return "ett_minutely"
    return "ratio_70_10_20"


def make_splits(table: DatasetTable, convention: str) -> SplitSpec:
    """Produce the chronological train/val/test intervals for a convention.

    ETT conventions use the fixed month boundaries; everything else splits
    70/10/20 with floor arithmetic.
    """
    if convention == "auto":
        convention = infer_convention(table.name)
    if convention not in SPLIT_CONVENTIONS:
        raise ConfigError(f"unknown split convention {convention!r}")
    if convention in ("ett_hourly", "ett_minutely"):
        bounds = ETT_HOURLY_BOUNDS if convention == "ett_hourly" else ETT_MINUTELY_BOUNDS
        if table.length < bounds[3]:
            raise ConfigError(
                f"{table.name}: {convention} needs at least {bounds[3]} rows, table has {table.length}"
            )
        return SplitSpec((bounds[0], bounds[1]), (bounds[1], bounds[2]), (bounds[2], bounds[3]))
    n = table.length
    train_end = math.floor(0.7 * n)
    val_end = math.floor(0.8 * n)
    if not (0 < train_end < val_end < n):
        raise ConfigError(f"{table.name}: too short ({n} rows) for a 70/10/20 split")
    return SplitSpec((0, train_end), (train_end, val_end), (val_end, n))


def fit_apply_scaler(table: DatasetTable, split: SplitSpec) -> tuple[DatasetTable, ScalerStats]:
    """Standardize every channel with mean/std fitted on the train range only."""
    lo, hi = split.train_range
    train = table.values[lo:hi]
    if train.shape[0] == 0:
        raise ConfigError("train range is empty")
    mean = train.mean(axis=0)
    std = train.std(axis=0)  # population std, ddof=0
    flat = np.flatnonzero(std <= 1e-12 * np.maximum(1.0, np.abs(mean)))
    if flat.size:
        raise DataError(f"zero-variance train channel(s): {[table.channel_names[i] for i in flat]}")
    stats = ScalerStats(mean=mean, std=std)
    standardized = DatasetTable(
        name=table.name,
        timestamps=table.timestamps,
        values=stats.transform(table.values),
        channel_names=table.channel_names,
    )
    return standardized, stats


def windowize(
    range_: tuple[int, int],
    lookback: int,
    horizon: int,
    stride: int = 1,
    mode: str = "train",
) -> list[int]:
    """Enumerate window input-start rows inside ``range_``, chronologically.

    A window starting at ``s`` spans input rows [s, s+L) and target rows
    [s+L, s+L+H). For stride 1 the count is ``range_len - L - H + 1``.
    """
    if lookback < 1 or horizon < 1 or stride < 1:
        raise ConfigError("lookback, horizon, and stride must all be positive")
    lo, hi = range_
    span = lookback + horizon
    last_start = hi - span
    if last_start < lo:
        if mode == "train":
            raise ConfigError(
                f"range {range_} too short for lookback {lookback} + horizon {horizon}"
            )
        logger.warning("range %s too short for L=%d H=%d; no windows", range_, lookback, horizon)
        return []
    return list(range(lo, last_start + 1, stride))


def few_shot_subset(train_windows: list[int], ratio: float) -> list[int]:
    """Keep the chronologically first ceil(ratio * count) training windows."""
    if not (0.0 < ratio <= 1.0):
        raise ConfigError(f"few-shot ratio must lie in (0, 1], got {ratio}")
    keep = math.ceil(ratio * len(train_windows))
    return train_windows[:keep]


def slice_batch(
    values: np.ndarray,
    starts: list[int] | np.ndarray,
    lookback: int,
    horizon: int,
) -> WindowBatch:
    """Materialize the windows beginning at ``starts`` as one batch."""
    starts = np.asarray(starts, dtype=np.int64)
    inputs = np.stack([values[s : s + lookback] for s in starts])
    targets = np.stack([values[s + lookback : s + lookback + horizon] for s in starts])
    return WindowBatch(inputs=inputs, targets=targets, window_start_indices=starts)


def iter_batches(
    values: np.ndarray,
    starts: list[int],
    lookback: int,
    horizon: int,
    batch_size: int,
    shuffle: bool = False,
    rng: np.random.Generator | None = None,
):
    """Yield WindowBatch objects; deterministic order given the same rng."""
    order = np.asarray(starts, dtype=np.int64)
    if shuffle:
        if rng is None:
            raise ConfigError("shuffling requires an explicit rng for determinism")
        order = rng.permutation(order)
    for i in range(0, len(order), batch_size):
        yield slice_batch(values, order[i : i + batch_size], lookback, horizon)


@dataclass
class PreparedData:
    """Standardized table plus window start lists for all three splits."""

    table: DatasetTable
    scaler: ScalerStats
    split: SplitSpec
    train_starts: list[int]
    val_starts: list[int]
    test_starts: list[int]


def prepare(
    table: DatasetTable,
    convention: str,
    lookback: int,
    horizon: int,
    few_shot_ratio: float | None = None,
) -> PreparedData:
    """Run the full pipeline: split, standardize, windowize, optional few-shot cut."""
    split = make_splits(table, convention)
    standardized, scaler = fit_apply_scaler(table, split)
    train_starts = windowize(split.windowing_range("train", lookback), lookback, horizon, mode="train")
    val_starts = windowize(split.windowing_range("val", lookback), lookback, horizon, mode="eval")
    test_starts = windowize(split.windowing_range("test", lookback), lookback, horizon, mode="eval")
    if few_shot_ratio is not None:
        train_starts = few_shot_subset(train_starts, few_shot_ratio)
    return PreparedData(
        table=standardized,
        scaler=scaler,
        split=split,
        train_starts=train_starts,
        val_starts=val_starts,
        test_starts=test_starts,
    )
