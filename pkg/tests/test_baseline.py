"""
Tests for the threshold baseline classifier.
"""

import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from utils.baseline import (
    GlobalThresholds,
    baseline_scatter_rows,
    classify_cell_baseline,
    classify_dataset_baseline,
    exceeding_fraction,
    global_averages,
)
from utils.preprocess import apply_scaler, convert_signal_units, fit_scaler
from utils.telemetry import CellLabel

TH = GlobalThresholds(t_avg=1000.0, c_avg=8.0)


def _cell(n_exceeding, n_total, make_dataset):
    rows = [{"throughput_kbps": 500.0, "cqi": 12.0}] * n_exceeding
    rows += [{"throughput_kbps": 1500.0, "cqi": 12.0}] * (n_total - n_exceeding)
    return make_dataset(rows).frame


class TestThresholds:
    """Dataset-wide flat means."""

    def test_flat_means(self, make_dataset):
        ds = make_dataset([
            {"cell_id": 1, "throughput_kbps": 100.0, "cqi": 1.0},
            {"cell_id": 1, "throughput_kbps": 200.0, "cqi": 2.0},
            {"cell_id": 2, "throughput_kbps": 600.0, "cqi": 9.0},
        ])
        th = global_averages(ds)
        assert th.t_avg == pytest.approx(300.0)
        assert th.c_avg == pytest.approx(4.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for case in range(1000):
            n = int(rng.integers(1, 30))
            t = rng.uniform(0, 20000, size=n)
            c = rng.uniform(0, 15, size=n)
            th = GlobalThresholds(t_avg=float(np.mean(t)), c_avg=float(np.mean(c)))
            expected = sum(1 for a, b in zip(t, c) if a < th.t_avg and b > th.c_avg) / n
            frame = pd.DataFrame({"throughput_kbps": t, "cqi": c})
            assert exceeding_fraction(frame, th) == pytest.approx(expected), f"case {case}"

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            GlobalThresholds(t_avg=float("nan"), c_avg=1.0)


class TestCellVerdict:
    """More than half of the samples must exceed the thresholds."""

    def test_six_of_ten_is_problematic(self, make_dataset):
        assert classify_cell_baseline(_cell(6, 10, make_dataset), TH) == CellLabel.PROBLEMATIC

    def test_exactly_half_is_normal(self, make_dataset):
        assert exceeding_fraction(_cell(5, 10, make_dataset), TH) == 0.5
        assert classify_cell_baseline(_cell(5, 10, make_dataset), TH) == CellLabel.NORMAL

    def test_equal_to_average_does_not_exceed(self, make_dataset):
        frame = make_dataset([{"throughput_kbps": 1000.0, "cqi": 12.0}, {"throughput_kbps": 500.0, "cqi": 8.0}]).frame
        assert exceeding_fraction(frame, TH) == 0.0

    def test_duplication_invariance(self, make_dataset):
        frame = _cell(3, 7, make_dataset)
        doubled = make_dataset([{"throughput_kbps": 500.0, "cqi": 12.0}] * 6 + [{"throughput_kbps": 1500.0, "cqi": 12.0}] * 8).frame
        assert exceeding_fraction(frame, TH) == exceeding_fraction(doubled, TH)

    def test_sample_list_input(self, make_dataset):
        ds = make_dataset([{"throughput_kbps": 500.0, "cqi": 12.0}, {"throughput_kbps": 1500.0, "cqi": 2.0}])
        assert exceeding_fraction(list(ds.iter_samples()), TH) == 0.5

    def test_empty_cell(self):
        with pytest.raises(ValueError):
            exceeding_fraction([], TH)


class TestDataset:
    """Whole-dataset baseline."""

    def test_every_cell_classified(self, small_synth):
        result = classify_dataset_baseline(small_synth, global_averages(small_synth))
        assert sorted(result) == small_synth.cell_ids
        assert all(0.0 <= f <= 1.0 for _, f in result.values())

    def test_scaling_preserves_verdicts(self, small_synth):
        raw = classify_dataset_baseline(small_synth, global_averages(small_synth))
        converted = convert_signal_units(small_synth)
        scaled = apply_scaler(converted, fit_scaler(converted))
        normalized = classify_dataset_baseline(scaled, global_averages(scaled))
        assert {c: v for c, (v, _) in raw.items()} == {c: v for c, (v, _) in normalized.items()}

    def test_scatter_rows(self, make_dataset):
        ds = make_dataset([{"throughput_kbps": 500.0, "cqi": 12.0}, {"cell_id": 2, "throughput_kbps": 1500.0}])
        rows = baseline_scatter_rows(ds, TH)
        assert [r["exceeds"] for r in rows] == [1, 0]
        assert rows[1]["cell_id"] == 2
