"""
Shared fixtures: hand-built telemetry rows and small datasets.
"""

import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from tools.schemas import SynthConfig
from utils.synthgen import generate
from utils.telemetry import CSV_COLUMNS, CellDataset, CellLabel

VALID_ROW = {
    "cell_id": 1,
    "ue_id": 1,
    "cell_data_rate_kbps": 1000.0,
    "cqi": 8.0,
    "erab_duration_s": 10.0,
    "frequency_band": 1,
    "load_active": 5.0,
    "prb": 20.0,
    "rsrp_dbm": -90.0,
    "rsrq_db": -8.0,
    "speed_range": 2,
    "throughput_kbps": 2000.0,
    "time_interval": 1,
    "timing_advance_m": 156.0,
    "tti_prb_use": 40.0,
}


def _rows_to_frame(rows):
    frame = pd.DataFrame([{**VALID_ROW, **r} for r in rows], columns=list(CSV_COLUMNS))
    for col in ("cell_id", "ue_id", "frequency_band", "speed_range", "time_interval"):
        frame[col] = frame[col].astype(np.int64)
    return frame


@pytest.fixture
def make_dataset():
    """Factory: list of partial row dicts (+ labels) -> CellDataset."""

    def _make(rows, labels=None):
        return CellDataset(frame=_rows_to_frame(rows), labels=labels or {})

    return _make


@pytest.fixture
def write_csv(tmp_path):
    """Factory: list of partial row dicts -> path of a telemetry CSV."""

    def _write(rows, name="data.csv"):
        path = tmp_path / name
        _rows_to_frame(rows).to_csv(path, index=False, lineterminator="\n")
        return path

    return _write


@pytest.fixture
def random_dataset():
    """Factory: n_cells cells with random UE/sample counts and values."""

    def _make(n_cells=6, seed=0, samples=(3, 12), ues=(1, 4)):
        rng = np.random.default_rng(seed)
        rows = []
        ue = 1
        for cell in range(1, n_cells + 1):
            for _ in range(int(rng.integers(ues[0], ues[1] + 1))):
                for _ in range(int(rng.integers(samples[0], samples[1] + 1))):
                    rows.append({
                        "cell_id": cell,
                        "ue_id": ue,
                        "cqi": float(rng.uniform(0, 15)),
                        "throughput_kbps": float(rng.uniform(0, 20000)),
                        "rsrp_dbm": float(rng.uniform(-140, -44)),
                        "rsrq_db": float(rng.uniform(-19.5, -3)),
                        "prb": float(rng.uniform(0, 100)),
                        "load_active": float(rng.uniform(0, 30)),
                    })
                ue += 1
        return CellDataset(frame=_rows_to_frame(rows))

    return _make


@pytest.fixture(scope="session")
def small_synth():
    """Small labeled synthetic dataset (12 cells, 3 planted)."""
    cfg = SynthConfig(n_cells=12, n_problematic=3, ues_per_cell=(6, 8), samples_per_ue=(20, 25), seed=11)
    return generate(cfg)


@pytest.fixture
def labels_of():
    def _labels(ds):
        return sorted(c for c, v in ds.labels.items() if v == CellLabel.PROBLEMATIC)

    return _labels
