"""
Prior-assumption selection of throughput-problematic cells.

A cell is assumed problematic when its UEs report good channel quality
but see poor throughput:

1. Per UE of each cell: mean throughput (T_avg,UE) and mean CQI (C_avg,UE)
2. Per cell: unweighted mean of the per-UE means (T_avg,cell, C_avg,cell),
   so a UE with many samples does not dominate
3. Intersection of the k cells with the highest C_avg,cell and the k cells
   with the lowest T_avg,cell, k = ceil(fraction * n_cells)

Only ranks matter, so the selection is unchanged by min-max scaling or
any other strictly increasing transform of either average.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Set, Tuple

from utils.telemetry import CellDataset

logger = logging.getLogger(__name__)

DEFAULT_PRIOR_FRACTION = 0.30


@dataclass(frozen=True)
class CellAggregates:
    """Two-stage throughput and CQI averages of one cell."""

    cell_id: int
    t_avg_cell: float
    c_avg_cell: float
    ue_throughput: Tuple[float, ...]
    ue_cqi: Tuple[float, ...]

    def __post_init__(self):
        if not self.ue_throughput or len(self.ue_throughput) != len(self.ue_cqi):
            raise ValueError(f"Cell {self.cell_id}: per-UE averages must be non-empty and paired")


def aggregate(ds: CellDataset) -> List[CellAggregates]:
    """
    Compute per-UE then per-cell averages of throughput and CQI.

    Returns:
        One CellAggregates per cell, ascending cell_id; per-UE tuples are
        ordered by ue_id
    """
    if len(ds) == 0:
        raise ValueError("Cannot aggregate an empty dataset")

    per_ue = (
        ds.frame.groupby(["cell_id", "ue_id"], sort=True)[["throughput_kbps", "cqi"]]
        .mean()
        .reset_index()
    )

    result = []
    for cell_id, group in per_ue.groupby("cell_id", sort=True):
        ue_t = tuple(float(v) for v in group["throughput_kbps"])
        ue_c = tuple(float(v) for v in group["cqi"])
        result.append(
            CellAggregates(
                cell_id=int(cell_id),
                t_avg_cell=sum(ue_t) / len(ue_t),
                c_avg_cell=sum(ue_c) / len(ue_c),
                ue_throughput=ue_t,
                ue_cqi=ue_c,
            )
        )
    return result


def selection_size(fraction: float, n_cells: int) -> int:
    """k = ceil(fraction * n_cells), immune to round-off such as 0.3 * 10."""
    return int(math.ceil(round(fraction * n_cells, 9)))


def rank_sets(aggs: Sequence[CellAggregates], fraction: float) -> Tuple[List[int], List[int]]:
    """
    Top-CQI and low-throughput cell lists (each of length k).

    Ties are broken by ascending cell_id.
    """
    k = selection_size(fraction, len(aggs))
    top_cqi = sorted(aggs, key=lambda a: (-a.c_avg_cell, a.cell_id))[:k]
    low_tput = sorted(aggs, key=lambda a: (a.t_avg_cell, a.cell_id))[:k]
    return [a.cell_id for a in top_cqi], [a.cell_id for a in low_tput]


def select_assumed_problematic(
    aggs: Sequence[CellAggregates],
    fraction: float = DEFAULT_PRIOR_FRACTION
) -> Set[int]:
    """
    Cells in both the highest-CQI and the lowest-throughput fraction.

    An empty result is valid here; building a clustering block from it
    is not.
    """
    if not aggs:
        raise ValueError("Prior selection needs at least one cell")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"Prior fraction must be in (0, 1), got {fraction}")

    top_cqi, low_tput = rank_sets(aggs, fraction)
    selected = set(top_cqi) & set(low_tput)
    logger.info(
        f"Prior assumption: k={len(top_cqi)} of {len(aggs)} cells per side, "
        f"{len(selected)} assumed problematic: {sorted(selected)}"
    )
    return selected


def prior_table(
    aggs: Sequence[CellAggregates],
    fraction: float = DEFAULT_PRIOR_FRACTION
) -> List[Dict[str, object]]:
    """Rows for the inspect-prior export (one per cell, ascending cell_id)."""
    top_cqi, low_tput = rank_sets(aggs, fraction)
    top_set, low_set = set(top_cqi), set(low_tput)
    return [
        {
            "cell_id": a.cell_id,
            "t_avg_cell": a.t_avg_cell,
            "c_avg_cell": a.c_avg_cell,
            "top_cqi": int(a.cell_id in top_set),
            "low_throughput": int(a.cell_id in low_set),
            "selected": int(a.cell_id in top_set and a.cell_id in low_set),
        }
        for a in sorted(aggs, key=lambda a: a.cell_id)
    ]
