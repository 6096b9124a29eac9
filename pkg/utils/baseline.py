"""
Threshold baseline classifier.

1. Average throughput and CQI over the whole dataset (flat means over
   samples, no per-UE weighting)
2. A sample "exceeds the thresholds" when its throughput is strictly
   below the average and its CQI strictly above it
3. A cell is problematic when more than 50 % of its samples exceed the
   thresholds (exactly 50 % is normal)

The pipeline runs the baseline on loaded (unscaled) values. An unclamped
min-max map is affine and increasing, so it would leave the verdicts
unchanged, but test values outside the training range are clamped and
clamping moves the global averages.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from utils.telemetry import CellDataset, CellLabel, Sample

logger = logging.getLogger(__name__)

PROBLEMATIC_SHARE = 0.5


@dataclass(frozen=True)
class GlobalThresholds:
    """Dataset-wide mean throughput and mean CQI."""

    t_avg: float
    c_avg: float

    def __post_init__(self):
        if not (np.isfinite(self.t_avg) and np.isfinite(self.c_avg)):
            raise ValueError(f"Thresholds must be finite, got t_avg={self.t_avg}, c_avg={self.c_avg}")


def global_averages(ds: CellDataset) -> GlobalThresholds:
    """Flat means of throughput and CQI over every sample."""
    if len(ds) == 0:
        raise ValueError("Cannot compute baseline thresholds of an empty dataset")
    return GlobalThresholds(
        t_avg=float(ds.frame["throughput_kbps"].mean()),
        c_avg=float(ds.frame["cqi"].mean()),
    )


def _columns(samples: Union[pd.DataFrame, Sequence[Sample]]) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(samples, pd.DataFrame):
        return samples["throughput_kbps"].to_numpy(dtype=float), samples["cqi"].to_numpy(dtype=float)
    return (
        np.array([s.throughput_kbps for s in samples], dtype=float),
        np.array([s.cqi for s in samples], dtype=float),
    )


def exceeds_thresholds(throughput: np.ndarray, cqi: np.ndarray, th: GlobalThresholds) -> np.ndarray:
    """Low throughput AND high CQI, both strict."""
    return (throughput < th.t_avg) & (cqi > th.c_avg)


def exceeding_fraction(samples: Union[pd.DataFrame, Sequence[Sample]], th: GlobalThresholds) -> float:
    """Share of a cell's samples that exceed the thresholds."""
    if len(samples) == 0:
        raise ValueError("Cannot classify a cell without samples")
    throughput, cqi = _columns(samples)
    return float(np.count_nonzero(exceeds_thresholds(throughput, cqi, th))) / len(throughput)


def classify_cell_baseline(samples: Union[pd.DataFrame, Sequence[Sample]], th: GlobalThresholds) -> CellLabel:
    """Problematic iff more than half of the samples exceed the thresholds."""
    if exceeding_fraction(samples, th) > PROBLEMATIC_SHARE:
        return CellLabel.PROBLEMATIC
    return CellLabel.NORMAL


def classify_dataset_baseline(
    ds: CellDataset,
    th: GlobalThresholds
) -> Dict[int, Tuple[CellLabel, float]]:
    """cell_id -> (verdict, exceeding fraction) for every cell."""
    result = {}
    for cell_id in ds.cell_ids:
        fraction = exceeding_fraction(ds.samples_of(cell_id), th)
        verdict = CellLabel.PROBLEMATIC if fraction > PROBLEMATIC_SHARE else CellLabel.NORMAL
        result[cell_id] = (verdict, fraction)

    n_problem = sum(1 for v, _ in result.values() if v == CellLabel.PROBLEMATIC)
    logger.info(
        f"Baseline: t_avg={th.t_avg:.6g}, c_avg={th.c_avg:.6g}; "
        f"{n_problem} of {len(result)} cells problematic"
    )
    return result


def baseline_scatter_rows(ds: CellDataset, th: GlobalThresholds) -> List[Dict[str, object]]:
    """Per-sample rows (cell_id, throughput, cqi, exceeds) for the scatter export."""
    frame = ds.frame
    flags = exceeds_thresholds(
        frame["throughput_kbps"].to_numpy(dtype=float), frame["cqi"].to_numpy(dtype=float), th
    )
    return [
        {"cell_id": int(c), "throughput_kbps": float(t), "cqi": float(q), "exceeds": int(e)}
        for c, t, q, e in zip(frame["cell_id"], frame["throughput_kbps"], frame["cqi"], flags)
    ]
