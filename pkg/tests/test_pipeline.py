"""
End-to-end tests of the pipeline operations and the CLI.

The small runs use a 12-cell synthetic dataset, two cluster counts and
a one-layer network so the full train/evaluate cycle takes seconds.
The full-size synthetic run is marked slow.
"""

import json
import os
import shutil
import sys
from pathlib import Path

import pytest
from pydantic import ValidationError

sys.path.insert(0, str(Path(__file__).parent.parent))

import celltriage
from tools.pipeline import (
    BUNDLE_DIR,
    PipelineStageError,
    load_bundle,
    run_baseline,
    run_classify,
    run_evaluate,
    run_inspect_prior,
    run_preprocess,
    run_split_study,
    run_train,
)
from tools.schemas import PipelineConfig, SynthConfig
from utils import baseline
from utils.preprocess import split_train_test
from utils.run_lock import LOCK_NAME
from utils.synthgen import generate, save_synth
from utils.telemetry import load_csv, scramble_ids


@pytest.fixture
def synth_files(tmp_path, small_synth):
    data, labels = save_synth(small_synth, tmp_path / "synth.csv", tmp_path / "synth_labels.csv")
    return data, labels


@pytest.fixture
def tiny_config(tmp_path, synth_files):
    data, labels = synth_files
    return {
        "data_path": str(data),
        "labels_path": str(labels),
        "output_dir": str(tmp_path / "run"),
        "seed": 3,
        "min_samples": 50,
        "cluster_ks": [2, 3],
        "mlp": {
            "cell_max_samples": 20,
            "units_per_layer": 16,
            "hidden_layers": 1,
            "learning_rate": 0.5,
            "max_epochs": 30,
            "batch_size": None,
        },
    }


@pytest.fixture
def cfg(tiny_config):
    return PipelineConfig.model_validate(tiny_config)


@pytest.fixture
def trained(cfg):
    report = run_train(cfg)
    return cfg, report


class TestTrain:
    """Training run artifacts."""

    def test_artifacts(self, trained):
        cfg, report = trained
        out = Path(cfg.output_dir)
        for name in ("train_report.json", "test.csv", "test_labels.csv", "manifest_train.json"):
            assert (out / name).exists(), f"{name} missing"
        for name in ("bundle.json", "block.json", "scaler.json", "mlp.npz", "mlp.json"):
            assert (out / BUNDLE_DIR / name).exists(), f"bundle/{name} missing"

    def test_report_dimensions(self, trained):
        cfg, report = trained
        assert report.n_models == len(report.assumed_problematic) * 2 * 2
        assert report.block_width == len(report.assumed_problematic) * 2 * (2 + 3)
        assert report.input_dim == 20 * report.block_width
        assert report.layer_widths == [16]
        assert len(report.loss_history) == 31
        assert report.n_cells_trained == 12

    def test_bundle_round_trip(self, trained):
        cfg, report = trained
        clf, meta = load_bundle(Path(cfg.output_dir) / BUNDLE_DIR)
        assert clf.input_dim == report.input_dim
        assert list(clf.assumed) == report.assumed_problematic
        assert meta["training_data_sha256"]

    def test_manifest_seeds(self, trained):
        cfg, _ = trained
        manifest = json.loads((Path(cfg.output_dir) / "manifest_train.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["seeds"]["root"] == 3
        assert "split/1" in manifest["seeds"]

    def test_missing_labels(self, tiny_config, tmp_path):
        tiny_config["labels_path"] = str(tmp_path / "nope.csv")
        with pytest.raises(PipelineStageError) as exc:
            run_train(PipelineConfig.model_validate(tiny_config))
        assert exc.value.stage == "load"

    def test_filter_everything(self, tiny_config):
        tiny_config["min_samples"] = 10_000
        with pytest.raises(PipelineStageError) as exc:
            run_train(PipelineConfig.model_validate(tiny_config))
        assert exc.value.stage == "filter"


class TestEvaluate:
    """Evaluation of the trained bundle."""

    def test_report(self, trained):
        cfg, _ = trained
        report = run_evaluate(cfg)
        assert report.n_cells == 12
        assert report.n_problematic == 3
        assert report.baseline is not None
        assert 0.0 <= report.proposed.prc_auc <= 1.0
        assert report.proposed.tp + report.proposed.fn == 3
        out = Path(cfg.output_dir)
        assert len((out / "verdicts.csv").read_text().strip().splitlines()) == 13
        assert (out / "prc.csv").exists()

    def test_byte_identical_rerun(self, cfg):
        out = Path(cfg.output_dir)
        run_train(cfg)
        run_evaluate(cfg)
        first = {n: (out / n).read_bytes() for n in ("train_report.json", "evaluation_report.json", "verdicts.csv")}
        run_train(cfg)
        run_evaluate(cfg)
        for name, content in first.items():
            assert (out / name).read_bytes() == content, f"{name} differs between runs"

    def test_refuses_training_data(self, trained, tmp_path):
        cfg, _ = trained
        copy = tmp_path / "copy.csv"
        shutil.copy(cfg.data_path, copy)
        cfg = cfg.model_copy(update={"test_data_path": str(copy), "test_labels_path": cfg.labels_path})
        with pytest.raises(PipelineStageError, match="allow-train-data"):
            run_evaluate(cfg)

    def test_training_data_flagged_when_allowed(self, trained, tmp_path):
        cfg, _ = trained
        copy = tmp_path / "copy.csv"
        shutil.copy(cfg.data_path, copy)
        cfg = cfg.model_copy(update={"test_data_path": str(copy), "test_labels_path": cfg.labels_path})
        report = run_evaluate(cfg, allow_train_data=True)
        assert report.evaluated_on_training_data
        assert any(w.category == "train_data_evaluation" for w in report.warnings)

    def test_stale_bundle(self, trained):
        cfg, _ = trained
        meta_path = Path(cfg.output_dir) / BUNDLE_DIR / "bundle.json"
        meta = json.loads(meta_path.read_text())
        meta["cell_max_samples"] += 1
        meta_path.write_text(json.dumps(meta))
        with pytest.raises(PipelineStageError) as exc:
            run_evaluate(cfg)
        assert exc.value.stage == "bundle"
        assert "Stale bundle" in str(exc.value)

    def test_no_bundle(self, cfg):
        with pytest.raises(PipelineStageError) as exc:
            run_evaluate(cfg)
        assert exc.value.stage == "bundle"

    def test_scrambled_ids_with_filtered_cells(self, tiny_config, small_synth):
        train, _ = split_train_test(scramble_ids(small_synth, 3), 0.7, 3)
        counts = train.sample_counts
        smallest_normal = min(n for c, n in counts.items() if not train.labels[c])
        tiny_config.update({"scramble_ids": True, "min_samples": smallest_normal + 1})
        cfg = PipelineConfig.model_validate(tiny_config)

        train_report = run_train(cfg)
        assert train_report.filtered_cells, "threshold should drop at least one cell"
        report = run_evaluate(cfg)

        out = Path(cfg.output_dir)
        test = load_csv(out / "test.csv")
        assert set(test.cell_ids) == set(counts), "test split must share the training id space"
        kept = [c for c in test.cell_ids if c not in set(train_report.filtered_cells)]
        assert report.n_cells == len(kept)
        assert report.n_samples == sum(test.sample_counts[c] for c in kept)
        evaluated = [int(line.split(",")[0]) for line in (out / "verdicts.csv").read_text().splitlines()[1:]]
        assert evaluated == sorted(kept)

        classified = run_classify(cfg, str(out / "test.csv"))
        assert sorted(classified) == sorted(test.cell_ids)

    def test_baseline_uses_loaded_values(self, trained):
        cfg, _ = trained
        run_evaluate(cfg)
        out = Path(cfg.output_dir)
        test = load_csv(out / "test.csv")
        th = baseline.global_averages(test)
        expected = baseline.classify_dataset_baseline(test, th)
        lines = (out / "verdicts.csv").read_text().strip().splitlines()
        header = lines[0].split(",")
        for line in lines[1:]:
            row = dict(zip(header, line.split(",")))
            cell = int(row["cell_id"])
            assert int(row["baseline_label"]) == int(expected[cell][0]), f"cell {cell}"
            assert float(row["baseline_fraction"]) == pytest.approx(expected[cell][1])

    def test_manifests_per_command(self, trained):
        cfg, _ = trained
        run_evaluate(cfg)
        out = Path(cfg.output_dir)
        assert json.loads((out / "manifest_train.json").read_text())["command"] == "train"
        assert json.loads((out / "manifest_evaluate.json").read_text())["command"] == "evaluate"
        assert not (out / "manifest.json").exists()

    def test_inputs_unchanged(self, cfg):
        before = {p: Path(p).read_bytes() for p in (cfg.data_path, cfg.labels_path)}
        run_train(cfg)
        run_evaluate(cfg)
        run_classify(cfg, cfg.data_path)
        run_baseline(cfg)
        for path, content in before.items():
            assert Path(path).read_bytes() == content, f"{path} was modified"


class TestOtherCommands:
    """classify, baseline, preprocess, inspect-prior, split-study."""

    def test_classify(self, trained):
        cfg, _ = trained
        result = run_classify(cfg, str(Path(cfg.output_dir) / "test.csv"))
        assert sorted(result) == list(range(1, 13))
        lines = (Path(cfg.output_dir) / "classification.csv").read_text().strip().splitlines()
        assert lines[0] == "cell_id,label,score"
        assert len(lines) == 13

    def test_baseline(self, cfg):
        result = run_baseline(cfg)
        out = Path(cfg.output_dir)
        assert len(result) == 12
        report = json.loads((out / "baseline_report.json").read_text())
        assert report["tp"] + report["fn"] == 3
        assert (out / "baseline_scatter.csv").exists()

    def test_preprocess(self, cfg):
        scaler = run_preprocess(cfg)
        out = Path(cfg.output_dir)
        assert (out / "preprocessed_train.csv").exists()
        assert (out / "preprocessed_test.csv").exists()
        assert set(scaler.features) == set(json.loads((out / "scaler.json").read_text())["minimum"])

    def test_inspect_prior(self, cfg):
        rows, selected = run_inspect_prior(cfg)
        assert len(rows) == 12
        assert {r["cell_id"] for r in rows if r["selected"]} == selected
        assert (Path(cfg.output_dir) / "prior.csv").exists()

    def test_split_study(self, tiny_config):
        tiny_config["mlp"]["max_epochs"] = 5
        cfg = PipelineConfig.model_validate(tiny_config)
        report = run_split_study(cfg, fractions=(0.5, 0.7), n_seeds=2)
        assert [r.train_fraction for r in report.rows] == [0.5, 0.7]
        assert report.seeds == [3, 4]
        assert all(r.n_runs + sum(f"fraction={r.train_fraction}" in x for x in report.failed_runs) == 2 for r in report.rows)
        assert (Path(cfg.output_dir) / "split_study.json").exists()


class TestConfig:
    """Pipeline config validation."""

    @pytest.mark.parametrize("n_jobs", [1, 4, -1, -2])
    def test_worker_counts(self, n_jobs):
        assert PipelineConfig(n_jobs=n_jobs).n_jobs == n_jobs

    def test_zero_workers(self):
        with pytest.raises(ValidationError, match="n_jobs"):
            PipelineConfig(n_jobs=0)

    def test_shipped_config(self):
        raw = json.loads((Path(__file__).parent.parent / "configs" / "pipeline_default.json").read_text())
        cfg = PipelineConfig.model_validate(raw)
        assert cfg.sorted_encoding
        assert cfg.mlp.batch_size == 1
        assert max(cfg.cluster_ks) <= cfg.mlp.cell_max_samples


class TestCli:
    """Exit codes and subcommand wiring."""

    def _write_config(self, tmp_path, tiny_config):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(tiny_config))
        return str(path)

    def test_generate(self, tmp_path):
        config = tmp_path / "synth.json"
        config.write_text(json.dumps({"n_cells": 5, "n_problematic": 1, "ues_per_cell": [2, 3]}))
        out = tmp_path / "gen.csv"
        assert celltriage.main(["generate", "--config", str(config), "--out", str(out), "--seed", "4"]) == 0
        assert out.exists()
        assert (tmp_path / "gen_labels.csv").exists()

    def test_train_and_evaluate(self, tmp_path, tiny_config):
        config = self._write_config(tmp_path, tiny_config)
        assert celltriage.main(["train", "--config", config, "--log-level", "WARNING"]) == 0
        assert celltriage.main(["evaluate", "--config", config, "--log-level", "WARNING"]) == 0
        out = Path(tiny_config["output_dir"])
        assert (out / "evaluation_report.json").exists()
        assert (out / "celltriage.log").exists()
        assert not (out / LOCK_NAME).exists()

    def test_plot_outputs(self, tmp_path, tiny_config):
        config = self._write_config(tmp_path, tiny_config)
        quiet = ["--log-level", "WARNING"]
        out = Path(tiny_config["output_dir"])
        assert celltriage.main(["inspect-prior", "--config", config, "--plot"] + quiet) == 0
        assert (out / "prior.png").stat().st_size > 0
        assert celltriage.main(["baseline", "--config", config, "--plot"] + quiet) == 0
        cell_plots = sorted((out / "baseline_plots").glob("cell_*.png"))
        assert len(cell_plots) == 12
        assert celltriage.main(["train", "--config", config] + quiet) == 0
        assert celltriage.main(["evaluate", "--config", config, "--plot"] + quiet) == 0
        assert (out / "prc.png").stat().st_size > 0
        for command in ("inspect-prior", "baseline", "train", "evaluate"):
            assert (out / f"manifest_{command}.json").exists(), f"manifest of {command} missing"

    def test_zero_workers_rejected(self, tmp_path, tiny_config):
        tiny_config["n_jobs"] = 0
        assert celltriage.main(["train", "--config", self._write_config(tmp_path, tiny_config)]) == 2

    def test_invalid_config(self, tmp_path, tiny_config):
        tiny_config["unknown_key"] = 1
        assert celltriage.main(["train", "--config", self._write_config(tmp_path, tiny_config)]) == 2

    def test_stage_failure(self, tmp_path, tiny_config):
        tiny_config["data_path"] = str(tmp_path / "missing.csv")
        assert celltriage.main(["train", "--config", self._write_config(tmp_path, tiny_config)]) == 1

    def test_locked_output(self, tmp_path, tiny_config):
        out = Path(tiny_config["output_dir"])
        out.mkdir(parents=True)
        (out / LOCK_NAME).write_text(str(os.getppid()))
        assert celltriage.main(["baseline", "--config", self._write_config(tmp_path, tiny_config)]) == 3

    def test_stale_lock_replaced(self, tmp_path, tiny_config):
        out = Path(tiny_config["output_dir"])
        out.mkdir(parents=True)
        (out / LOCK_NAME).write_text("999999999")
        assert celltriage.main(["baseline", "--config", self._write_config(tmp_path, tiny_config)]) == 0
        assert not (out / LOCK_NAME).exists()


@pytest.mark.slow
class TestFullScale:
    """Full-size synthetic run with the shipped configs: 53 cells, 6 planted, 70/30 split."""

    def test_beats_baseline(self, tmp_path):
        synth = generate(SynthConfig.model_validate(
            json.loads((Path(__file__).parent.parent / "configs" / "synth_default.json").read_text())
        ))
        data, labels = save_synth(synth, tmp_path / "synth.csv", tmp_path / "synth_labels.csv")
        shipped = json.loads((Path(__file__).parent.parent / "configs" / "pipeline_default.json").read_text())
        shipped.update({
            "data_path": str(data),
            "labels_path": str(labels),
            "output_dir": str(tmp_path / "run"),
        })
        cfg = PipelineConfig.model_validate(shipped)
        assert cfg.mlp == PipelineConfig().mlp, "shipped network settings drifted from the defaults"
        run_train(cfg)
        report = run_evaluate(cfg)
        assert report.proposed.f1 >= 0.6, f"proposed F1 {report.proposed.f1:.3f}"
        assert report.proposed.f1 > report.baseline.f1, (
            f"proposed F1 {report.proposed.f1:.3f} vs baseline {report.baseline.f1:.3f}"
        )
