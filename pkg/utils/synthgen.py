"""
Seeded synthetic telemetry with planted throughput-problematic cells.

Stands in for operator exports. Every cell draws its own substream from
("synth", "cell", index), so a cell's samples do not depend on how many
cells come after it.

Cell types:
- Normal: CQI centered in [4, 11]; throughput grows with CQI
- Congested (a share of the normal cells): busy urban cells with good
  coverage (CQI centered in [8, 12]), high active-UE count and PRB use,
  and throughput cut by the load. They are NOT faulty and are labeled
  normal.
- Problematic (planted): CQI centered in [10.5, 13] with ordinary load,
  but throughput multiplied by a suppression factor in [0.05, 0.25]

Per-sample model:
    throughput = base_rate * (cqi / 15) * congestion * lognormal noise
    rsrp, rsrq follow CQI linearly plus Gaussian noise
    erab duration grows by 4 s per sample within a UE session
    cell data rate ~ throughput * active UEs
Band, speed range, time interval and timing advance are uniform over
their legal values.
"""

import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import truncnorm

from tools.schemas import SynthConfig
from utils.seeding import stage_rng
from utils.telemetry import (
    CSV_COLUMNS,
    FEATURE_BOUNDS,
    TIMING_ADVANCE_STEP_M,
    CellDataset,
    CellLabel,
    save_csv,
    save_labels,
)

logger = logging.getLogger(__name__)

BASE_RATE_KBPS = 20000.0
SAMPLE_PERIOD_S = 4.0
FREQUENCY_BANDS = (1, 3, 7, 20)
MAX_TA_STEPS = 40

NORMAL_CQI_CENTER = (4.0, 11.0)
CONGESTED_CQI_CENTER = (8.0, 12.0)
PROBLEMATIC_CQI_CENTER = (10.5, 13.0)
SUPPRESSION = (0.05, 0.25)
UE_CQI_SPREAD = 1.5


def _cell_profile(kind: str, rng: np.random.Generator) -> Dict[str, float]:
    """Cell-level parameters shared by all samples of the cell."""
    if kind == "congested":
        return {
            "cqi_center": rng.uniform(*CONGESTED_CQI_CENTER),
            "congestion": rng.uniform(0.3, 0.5),
            "load": rng.uniform(20.0, 40.0),
            "tti": rng.uniform(80.0, 100.0),
            "suppression": 1.0,
        }
    center = PROBLEMATIC_CQI_CENTER if kind == "problematic" else NORMAL_CQI_CENTER
    return {
        "cqi_center": rng.uniform(*center),
        "congestion": rng.uniform(0.6, 1.0),
        "load": rng.uniform(2.0, 12.0),
        "tti": rng.uniform(15.0, 60.0),
        "suppression": rng.uniform(*SUPPRESSION) if kind == "problematic" else 1.0,
    }


def _draw_cqi(center: float, n: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    center = float(np.clip(center, 0.0, 15.0))
    sd = 4.0 * noise
    if sd == 0.0:
        return np.full(n, center)
    a, b = (0.0 - center) / sd, (15.0 - center) / sd
    return truncnorm.rvs(a, b, loc=center, scale=sd, size=n, random_state=rng)


def _generate_cell(
    cell_id: int,
    kind: str,
    first_ue_id: int,
    cfg: SynthConfig,
    rng: np.random.Generator
) -> pd.DataFrame:
    profile = _cell_profile(kind, rng)
    n_ues = int(rng.integers(cfg.ues_per_cell[0], cfg.ues_per_cell[1] + 1))

    blocks = []
    for u in range(n_ues):
        n = int(rng.integers(cfg.samples_per_ue[0], cfg.samples_per_ue[1] + 1))
        ue_center = profile["cqi_center"] + rng.normal(0.0, UE_CQI_SPREAD)
        cqi = _draw_cqi(ue_center, n, cfg.noise, rng)

        # Log-normal with mean 1 so noise does not shift the cell average.
        sigma = cfg.noise
        jitter = rng.lognormal(-0.5 * sigma ** 2, sigma, size=n) if sigma > 0 else np.ones(n)
        throughput = (
            BASE_RATE_KBPS * (cqi / 15.0) * profile["congestion"] * profile["suppression"] * jitter
        )

        load = np.maximum(profile["load"] * rng.uniform(0.7, 1.3, size=n), 0.0)
        tti = np.clip(profile["tti"] + rng.normal(0.0, 5.0, size=n), 0.0, 100.0)
        prb = np.clip(tti / np.maximum(load, 1.0) * rng.uniform(0.5, 1.5, size=n), 0.0, 100.0)

        blocks.append(pd.DataFrame({
            "cell_id": cell_id,
            "ue_id": first_ue_id + u,
            "cell_data_rate_kbps": throughput * load * rng.uniform(0.8, 1.2, size=n),
            "cqi": cqi,
            "erab_duration_s": rng.uniform(0.0, 600.0) + SAMPLE_PERIOD_S * np.arange(n),
            "frequency_band": rng.choice(FREQUENCY_BANDS, size=n),
            "load_active": load,
            "prb": prb,
            "rsrp_dbm": -140.0 + (cqi / 15.0) * 80.0 + rng.normal(0.0, 5.0, size=n),
            "rsrq_db": -19.5 + (cqi / 15.0) * 14.0 + rng.normal(0.0, 1.5, size=n),
            "speed_range": rng.integers(1, 4, size=n),
            "throughput_kbps": throughput,
            "time_interval": rng.integers(1, 5, size=n),
            "timing_advance_m": TIMING_ADVANCE_STEP_M * rng.integers(0, MAX_TA_STEPS + 1, size=n),
            "tti_prb_use": tti,
        }))

    frame = pd.concat(blocks, ignore_index=True)
    for col in ("rsrp_dbm", "rsrq_db"):
        frame[col] = frame[col].clip(FEATURE_BOUNDS[col]["min"], FEATURE_BOUNDS[col]["max"])
    return frame


def plan_cells(cfg: SynthConfig) -> List[str]:
    """Cell kind ("normal", "congested" or "problematic") per cell index."""
    rng = stage_rng(cfg.seed, "synth", "plant")
    kinds = ["normal"] * cfg.n_cells
    planted = rng.choice(cfg.n_cells, size=cfg.n_problematic, replace=False)
    for idx in planted:
        kinds[int(idx)] = "problematic"

    normal_idx = [i for i, k in enumerate(kinds) if k == "normal"]
    n_congested = int(round(cfg.congested_fraction * len(normal_idx)))
    if n_congested:
        for idx in rng.choice(normal_idx, size=n_congested, replace=False):
            kinds[int(idx)] = "congested"
    return kinds


def generate(cfg: SynthConfig) -> CellDataset:
    """
    Generate a labeled dataset.

    Cells get ids 1..n_cells and UEs globally sequential ids. Problematic
    cells are labeled 1, normal and congested cells 0.
    """
    kinds = plan_cells(cfg)
    frames = []
    labels: Dict[int, CellLabel] = {}
    next_ue = 1
    for idx, kind in enumerate(kinds):
        cell_id = idx + 1
        frame = _generate_cell(cell_id, kind, next_ue, cfg, stage_rng(cfg.seed, "synth", "cell", idx))
        next_ue += int(frame["ue_id"].nunique())
        frames.append(frame)
        labels[cell_id] = CellLabel.PROBLEMATIC if kind == "problematic" else CellLabel.NORMAL

    frame = pd.concat(frames, ignore_index=True).loc[:, list(CSV_COLUMNS)]
    frame["frequency_band"] = frame["frequency_band"].astype(np.int64)
    ds = CellDataset(frame=frame, labels=labels)

    logger.info(
        f"Generated {len(ds)} samples: {cfg.n_cells} cells "
        f"({kinds.count('problematic')} problematic, {kinds.count('congested')} congested), "
        f"{next_ue - 1} UEs, seed {cfg.seed}"
    )
    return ds


def save_synth(
    ds: CellDataset,
    data_path: Union[str, Path],
    labels_path: Union[str, Path]
) -> Tuple[Path, Path]:
    """Write the samples CSV and the labels CSV."""
    return save_csv(ds, data_path), save_labels(ds.labels, labels_path)
