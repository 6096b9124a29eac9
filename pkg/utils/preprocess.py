"""
Preprocessing chain, augmentation and the per-cell train/test split.

Preprocessing runs in a fixed order:
1. Drop cells with fewer than `min_samples` training samples
2. RSRP dBm -> linear (watts, 10^(v/10) / 1000)
3. RSRQ dB -> linear (10^(v/20))
4. Min-max scaling of every feature except the cell and UE identifiers

Notes:
    * The RSRP conversion is the dBm -> milliwatt conversion rescaled by
      1/1000. Reading the exponent as (v/10)/1000 would map every RSRP
      value to ~1.0 and erase the feature.
    * Scaling parameters are fitted on the training side only and reused
      for test data; test values outside the training range are clamped
      to [0, 1].
    * The split is sample-wise inside each cell, so every cell appears in
      both the training and the test side.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, TypeVar, Union

import numpy as np
import pandas as pd

from utils.seeding import stage_rng
from utils.telemetry import MODEL_FEATURES, CellDataset, Sample

logger = logging.getLogger(__name__)

DEFAULT_MIN_SAMPLES = 100

CellSamples = TypeVar("CellSamples", pd.DataFrame, List[Sample])


# ---------------------------------------------------------------------------
# Step 1: low-sample filter
# ---------------------------------------------------------------------------

def filter_low_sample_cells(train: CellDataset, min_samples: int = DEFAULT_MIN_SAMPLES) -> CellDataset:
    """
    Remove every cell with fewer than `min_samples` training samples.

    Args:
        train: Training dataset
        min_samples: Minimum sample count to keep a cell (strict "lower than")

    Returns:
        Dataset without the sparse cells; their labels are dropped too

    Raises:
        ValueError: nothing is left to train on
    """
    counts = train.sample_counts
    keep = [cell for cell, n in counts.items() if n >= min_samples]
    dropped = sorted(set(counts) - set(keep))

    if not keep:
        raise ValueError(
            f"All {len(counts)} cells have fewer than {min_samples} training samples; "
            f"nothing left to train on. Lower min_samples or provide more data."
        )
    if dropped:
        logger.info(
            f"Filtered {len(dropped)} cell(s) with < {min_samples} training samples: "
            f"{dropped[:10]}{' ...' if len(dropped) > 10 else ''}"
        )
        return train.restrict(keep)
    return train


# ---------------------------------------------------------------------------
# Steps 2-3: logarithmic -> linear conversions
# ---------------------------------------------------------------------------

def _finite(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} conversion requires finite input, got {v!r}")
    return arr


def rsrp_db_to_linear(v: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Convert RSRP from dBm to linear scale: 10^(v/10) / 1000.

    Example:
        >>> rsrp_db_to_linear(-20.0)
        1e-05
    """
    arr = _finite(v, "RSRP")
    out = np.power(10.0, arr / 10.0) / 1000.0
    return float(out) if out.ndim == 0 else out


def rsrq_db_to_linear(v: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Convert RSRQ from dB to linear scale: 10^(v/20)."""
    arr = _finite(v, "RSRQ")
    out = np.power(10.0, arr / 20.0)
    return float(out) if out.ndim == 0 else out


def convert_signal_units(ds: CellDataset) -> CellDataset:
    """Apply the RSRP and RSRQ conversions column-wise (column names kept)."""
    frame = ds.frame.copy()
    frame["rsrp_dbm"] = rsrp_db_to_linear(frame["rsrp_dbm"].to_numpy())
    frame["rsrq_db"] = rsrq_db_to_linear(frame["rsrq_db"].to_numpy())
    return ds.with_frame(frame)


# ---------------------------------------------------------------------------
# Step 4: min-max scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalerParams:
    """Per-feature minimum and maximum observed on the training set."""

    minimum: Dict[str, float]
    maximum: Dict[str, float]

    def __post_init__(self):
        for feature in self.minimum:
            if self.maximum[feature] < self.minimum[feature]:
                raise ValueError(
                    f"Scaler max < min for '{feature}': "
                    f"{self.maximum[feature]} < {self.minimum[feature]}"
                )

    @property
    def features(self) -> Tuple[str, ...]:
        return tuple(self.minimum)

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {"minimum": dict(self.minimum), "maximum": dict(self.maximum)}

    @classmethod
    def from_dict(cls, data: Dict[str, Dict[str, float]]) -> "ScalerParams":
        return cls(
            minimum={k: float(v) for k, v in data["minimum"].items()},
            maximum={k: float(v) for k, v in data["maximum"].items()},
        )


def fit_scaler(train: CellDataset) -> ScalerParams:
    """
    Record per-feature min/max over all training samples.

    Identifiers are excluded. Constant features are recorded as-is and
    mapped to 0.0 by apply_scaler.
    """
    if len(train) == 0:
        raise ValueError("Cannot fit scaler on an empty training set")

    values = train.frame.loc[:, list(MODEL_FEATURES)]
    minimum = {f: float(values[f].min()) for f in MODEL_FEATURES}
    maximum = {f: float(values[f].max()) for f in MODEL_FEATURES}

    constant = [f for f in MODEL_FEATURES if maximum[f] == minimum[f]]
    if constant:
        logger.warning(f"Constant feature(s) in training set map to 0.0: {', '.join(constant)}")
    return ScalerParams(minimum=minimum, maximum=maximum)


def apply_scaler(ds: CellDataset, p: ScalerParams) -> CellDataset:
    """Min-max scale every model feature into [0, 1] (clamping unseen extremes)."""
    frame = ds.frame.copy()
    for feature in p.features:
        low, high = p.minimum[feature], p.maximum[feature]
        column = frame[feature].to_numpy(dtype=float)
        if high == low:
            scaled = np.zeros_like(column)
        else:
            scaled = np.clip((column - low) / (high - low), 0.0, 1.0)
        frame[feature] = scaled
    return ds.with_frame(frame)


def save_scaler(p: ScalerParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(p.to_dict(), f, indent=2, sort_keys=True)
    return path


def load_scaler(path: Union[str, Path]) -> ScalerParams:
    with open(path) as f:
        return ScalerParams.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# Split and augmentation
# ---------------------------------------------------------------------------

def split_train_test(
    ds: CellDataset,
    train_fraction: float,
    seed: int
) -> Tuple[CellDataset, CellDataset]:
    """
    Split every cell's samples between a training and a test side.

    Within each cell the samples are shuffled with a seed derived from
    (seed, cell_id); the training side takes round(train_fraction * n)
    of them (half rounds up, at least one sample per side). Each side
    keeps the dataset order. Labels are copied to both sides.

    Raises:
        ValueError: fraction outside (0, 1) or a cell with < 2 samples
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")

    cell_col = ds.frame["cell_id"].to_numpy()
    train_rows: List[np.ndarray] = []
    test_rows: List[np.ndarray] = []

    for cell_id in ds.cell_ids:
        rows = np.flatnonzero(cell_col == cell_id)
        n = len(rows)
        if n < 2:
            raise ValueError(
                f"Cell {cell_id} has {n} sample(s); at least 2 are needed to "
                f"place it in both the training and the test side"
            )
        n_train = int(math.floor(train_fraction * n + 0.5))
        n_train = min(max(n_train, 1), n - 1)
        shuffled = stage_rng(seed, "split", cell_id).permutation(rows)
        train_rows.append(np.sort(shuffled[:n_train]))
        test_rows.append(np.sort(shuffled[n_train:]))

    train_idx = np.sort(np.concatenate(train_rows))
    test_idx = np.sort(np.concatenate(test_rows))
    labels = dict(ds.labels)
    train = CellDataset(frame=ds.frame.iloc[train_idx], labels=labels)
    test = CellDataset(frame=ds.frame.iloc[test_idx], labels=labels)

    logger.info(
        f"Split {len(ds)} samples of {len(ds.cell_ids)} cells into "
        f"{len(train)} training / {len(test)} test samples (fraction {train_fraction})"
    )
    return train, test


def fix_sample_count(cell_samples: CellSamples, target: int, seed: int) -> CellSamples:
    """
    Bring one cell's samples to exactly `target` rows.

    Too few samples: cyclic duplication (row i of the result is sample
    i mod n). Too many: a seeded uniform random subset, kept in original
    order. Equal: unchanged.

    Args:
        cell_samples: DataFrame of one cell's samples, or a list of Sample
        target: Desired count (>= 1)
        seed: Seed for random dropping

    Returns:
        Same container type as the input, with `target` entries
    """
    n = len(cell_samples)
    if n == 0:
        raise ValueError("Cannot fix the sample count of an empty cell")
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target}")

    if n == target:
        return cell_samples
    if n < target:
        idx = np.arange(target) % n
    else:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=target, replace=False))

    if isinstance(cell_samples, pd.DataFrame):
        return cell_samples.iloc[idx].reset_index(drop=True)
    return [cell_samples[i] for i in idx]


# ---------------------------------------------------------------------------
# Full chain
# ---------------------------------------------------------------------------

def preprocess_split(
    train: CellDataset,
    test: CellDataset,
    min_samples: int = DEFAULT_MIN_SAMPLES
) -> Tuple[CellDataset, CellDataset, ScalerParams]:
    """
    Run filter -> RSRP -> RSRQ -> min-max on a train/test pair.

    Cells removed from the training side by the filter are removed from
    the test side as well. The scaler is fitted on the training side.

    Returns:
        (normalized train, normalized test, fitted scaler)
    """
    train = filter_low_sample_cells(train, min_samples)
    test = test.restrict(train.cell_ids)

    train = convert_signal_units(train)
    test = convert_signal_units(test) if len(test) else test

    scaler = fit_scaler(train)
    return apply_scaler(train, scaler), apply_scaler(test, scaler), scaler


def prepare_for_model(ds: CellDataset, scaler: ScalerParams) -> CellDataset:
    """Convert and scale new data with an already fitted scaler."""
    return apply_scaler(convert_signal_units(ds), scaler)
