"""
Tests for the preprocessing chain, augmentation and the per-cell split.

Reference values:
- RSRP -20 dBm -> 1e-5, RSRQ -8 dB -> 0.398107...
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from utils.preprocess import (
    ScalerParams,
    apply_scaler,
    convert_signal_units,
    filter_low_sample_cells,
    fit_scaler,
    fix_sample_count,
    load_scaler,
    preprocess_split,
    rsrp_db_to_linear,
    rsrq_db_to_linear,
    save_scaler,
    split_train_test,
)
from utils.telemetry import MODEL_FEATURES, CellLabel


class TestConversions:
    """Logarithmic to linear conversions."""

    def test_rsrp_reference(self):
        assert rsrp_db_to_linear(-20.0) == pytest.approx(1e-5, rel=1e-12)

    def test_rsrq_reference(self):
        assert rsrq_db_to_linear(-8.0) == pytest.approx(10 ** (-8 / 20), rel=1e-12)
        assert rsrq_db_to_linear(-8.0) == pytest.approx(0.398107, abs=1e-6)

    def test_arrays(self):
        out = rsrp_db_to_linear(np.array([-140.0, -44.0]))
        np.testing.assert_allclose(out, [1e-17, 10 ** -4.4 / 1000], rtol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            rsrp_db_to_linear(float("nan"))
        with pytest.raises(ValueError):
            rsrq_db_to_linear(np.array([0.0, np.inf]))

    def test_convert_columns(self, make_dataset):
        ds = convert_signal_units(make_dataset([{"rsrp_dbm": -90.0, "rsrq_db": -8.0}]))
        assert ds.frame["rsrp_dbm"].iloc[0] == pytest.approx(1e-12)
        assert ds.frame["rsrq_db"].iloc[0] == pytest.approx(0.398107, abs=1e-6)


class TestFilter:
    """Low-sample cell removal."""

    def test_strictly_lower_removed(self, make_dataset):
        rows = [{"cell_id": 1}] * 3 + [{"cell_id": 2}] * 2
        ds = make_dataset(rows, labels={2: CellLabel.PROBLEMATIC})
        out = filter_low_sample_cells(ds, min_samples=3)
        assert out.cell_ids == [1]
        assert out.labels == {}

    def test_nothing_left(self, make_dataset):
        with pytest.raises(ValueError, match="nothing left"):
            filter_low_sample_cells(make_dataset([{}]), min_samples=2)


class TestScaler:
    """Min-max scaling fitted on training data."""

    def test_range_and_extremes(self, random_dataset):
        train = random_dataset(seed=1)
        scaler = fit_scaler(train)
        out = apply_scaler(train, scaler)
        values = out.frame[list(MODEL_FEATURES)].to_numpy()
        assert values.min() >= 0.0 and values.max() <= 1.0
        for f in MODEL_FEATURES:
            if scaler.maximum[f] > scaler.minimum[f]:
                assert out.frame[f].min() == 0.0
                assert out.frame[f].max() == 1.0

    def test_degenerate_feature_maps_to_zero(self, random_dataset):
        train = random_dataset(seed=2)
        out = apply_scaler(train, fit_scaler(train))
        # speed_range is constant (2) in the fixture
        assert (out.frame["speed_range"] == 0.0).all()

    def test_test_values_clamped(self, make_dataset):
        train = make_dataset([{"cqi": 4.0}, {"cqi": 8.0}])
        test = make_dataset([{"cqi": 0.0}, {"cqi": 15.0}, {"cqi": 6.0}])
        out = apply_scaler(test, fit_scaler(train))
        assert list(out.frame["cqi"]) == [0.0, 1.0, 0.5]

    def test_identifiers_untouched(self, random_dataset):
        train = random_dataset(seed=3)
        out = apply_scaler(train, fit_scaler(train))
        assert out.frame["cell_id"].equals(train.frame["cell_id"])

    def test_save_load(self, random_dataset, tmp_path):
        scaler = fit_scaler(random_dataset(seed=4))
        loaded = load_scaler(save_scaler(scaler, tmp_path / "s.json"))
        assert loaded == scaler

    def test_max_below_min_rejected(self):
        with pytest.raises(ValueError):
            ScalerParams(minimum={"cqi": 2.0}, maximum={"cqi": 1.0})


class TestFixSampleCount:
    """Duplication and dropping to a target count."""

    def test_duplicate_cyclic(self, make_dataset):
        cell = make_dataset([{"ue_id": i} for i in range(1, 4)]).frame
        out = fix_sample_count(cell, 7, seed=0)
        assert list(out["ue_id"]) == [1, 2, 3, 1, 2, 3, 1]

    def test_drop_keeps_order(self, make_dataset):
        cell = make_dataset([{"ue_id": i} for i in range(1, 11)]).frame
        out = fix_sample_count(cell, 4, seed=5)
        ids = list(out["ue_id"])
        assert len(ids) == 4 and ids == sorted(ids) and len(set(ids)) == 4

    def test_drop_deterministic(self, make_dataset):
        cell = make_dataset([{"ue_id": i} for i in range(1, 11)]).frame
        assert fix_sample_count(cell, 4, seed=5).equals(fix_sample_count(cell, 4, seed=5))

    def test_equal_unchanged(self, make_dataset):
        cell = make_dataset([{}, {}]).frame
        assert fix_sample_count(cell, 2, seed=0) is cell

    def test_sample_list(self, make_dataset):
        samples = list(make_dataset([{"ue_id": 1}]).iter_samples())
        out = fix_sample_count(samples, 3, seed=0)
        assert len(out) == 3 and all(s.ue_id == 1 for s in out)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            fix_sample_count([], 3, seed=0)


class TestSplit:
    """Per-cell train/test split."""

    def test_every_cell_on_both_sides(self, random_dataset):
        ds = random_dataset(n_cells=5, seed=6)
        train, test = split_train_test(ds, 0.7, seed=1)
        assert train.cell_ids == test.cell_ids == ds.cell_ids
        assert len(train) + len(test) == len(ds)

    def test_fraction_per_cell(self, make_dataset):
        ds = make_dataset([{"cell_id": 1, "ue_id": i} for i in range(10)])
        train, test = split_train_test(ds, 0.7, seed=0)
        assert len(train) == 7 and len(test) == 3

    def test_deterministic_and_disjoint(self, random_dataset):
        ds = random_dataset(seed=7)
        a_train, a_test = split_train_test(ds, 0.7, seed=3)
        b_train, _ = split_train_test(ds, 0.7, seed=3)
        assert a_train.frame.equals(b_train.frame)
        # rows are unique (random floats), so sides must not share any
        key = ["cell_id", "ue_id", "cqi", "throughput_kbps"]
        merged = a_train.frame[key].merge(a_test.frame[key], how="inner")
        assert merged.empty

    def test_single_sample_cell_rejected(self, make_dataset):
        with pytest.raises(ValueError, match="at least 2"):
            split_train_test(make_dataset([{}]), 0.7, seed=0)

    def test_bad_fraction(self, random_dataset):
        with pytest.raises(ValueError):
            split_train_test(random_dataset(), 1.0, seed=0)


class TestPreprocessSplit:
    """Full ordered chain."""

    def test_filtered_cells_removed_from_test(self, make_dataset):
        rows = [{"cell_id": 1, "cqi": float(i % 15)} for i in range(8)] + [{"cell_id": 2}] * 2
        ds = make_dataset(rows)
        train, test = split_train_test(ds, 0.5, seed=0)
        train_n, test_n, scaler = preprocess_split(train, test, min_samples=3)
        assert train_n.cell_ids == [1]
        assert test_n.cell_ids == [1]
        assert train_n.frame["cqi"].max() == 1.0
