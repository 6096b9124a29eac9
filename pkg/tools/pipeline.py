"""
Pipeline operations behind the celltriage subcommands.

Each run_* function takes a validated config, executes its stages in
order and writes its artifacts into cfg.output_dir:

    generate       data CSV + labels CSV
    preprocess     preprocessed_train.csv, preprocessed_test.csv, scaler.json
    inspect-prior  prior.csv (+ prior.png)
    train          bundle/, train_report.json, test.csv, test_labels.csv
    evaluate       evaluation_report.json, verdicts.csv, prc.csv (+ prc.png)
    classify       classification.csv
    baseline       baseline_verdicts.csv, baseline_scatter.csv (+ plots)
    split-study    split_study.json

Any failure is re-raised as PipelineStageError carrying the stage name.
Reports are written with sorted keys and no timestamps; each command
records its config, derived seeds and input hashes in its own
manifest_<command>.json, so a later command never overwrites the
manifest of an earlier one.
"""

import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from tools.schemas import (
    EvaluationReport,
    MethodScores,
    MlpConfig,
    PipelineConfig,
    RunManifest,
    RunWarning,
    SplitStudyReport,
    SplitStudyRow,
    SynthConfig,
    TrainingReport,
)
from utils import baseline, metrics, mlp, plots, prior, synthgen
from utils.cluster_block import ClusterBlock, build_block, encode_dataset, load_block, save_block
from utils.preprocess import (
    ScalerParams,
    apply_scaler,
    convert_signal_units,
    filter_low_sample_cells,
    fit_scaler,
    load_scaler,
    prepare_for_model,
    preprocess_split,
    save_scaler,
    split_train_test,
)
from utils.seeding import derive_seed
from utils.telemetry import (
    CellDataset,
    CellLabel,
    attach_labels,
    load_csv,
    load_labels,
    save_csv,
    save_labels,
    scramble_ids,
)

logger = logging.getLogger(__name__)

__version__ = "0.1.0"

BUNDLE_FORMAT_VERSION = 1
BUNDLE_DIR = "bundle"
PathLike = Union[str, Path]


class PipelineStageError(RuntimeError):
    """Failure inside a named pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        return f"[{self.stage}] {super().__str__()}"


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Tag any exception raised inside the block with the stage name."""
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as e:
        raise PipelineStageError(name, f"{type(e).__name__}: {e}") from e


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def convert_to_dict(obj):
    """Recursively convert dataclasses, Pydantic models and numpy values to plain JSON types."""
    if isinstance(obj, BaseModel):
        return convert_to_dict(obj.model_dump(mode="json"))
    if hasattr(obj, "__dataclass_fields__"):
        return {f.name: convert_to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {str(k): convert_to_dict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        return [convert_to_dict(item) for item in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(path: PathLike, obj) -> Path:
    """Deterministic JSON: sorted keys, fixed indentation, no NaN."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(convert_to_dict(obj), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    return path


def write_rows(path: PathLike, rows: Sequence[Mapping[str, object]], columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows), columns=list(columns)).to_csv(path, index=False, lineterminator="\n")
    return path


def write_progress(out_dir: Path, stage_name: str, current: int, total: int = 100) -> None:
    """
    Write progress.json so long runs can be monitored from another shell.

    Args:
        out_dir: Run output directory
        stage_name: Description of the current stage
        current: Current progress (0-100)
        total: Total progress points (default 100)
    """
    try:
        with open(out_dir / "progress.json", "w") as f:
            json.dump({
                "stage": stage_name,
                "current": current,
                "total": total,
                "timestamp": time.time()
            }, f)
    except Exception as e:
        logger.warning(f"Failed to write progress: {e}")


def sha256_file(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: BaseModel) -> str:
    text = json.dumps(cfg.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def stage_seeds(seed: int, cell_ids: Sequence[int] = ()) -> Dict[str, int]:
    """Derived seeds of a run, keyed by stage tag path."""
    seeds = {
        "root": int(seed),
        "mlp/init": derive_seed(seed, "mlp", "init"),
        "scramble/cell": derive_seed(seed, "scramble", "cell"),
        "scramble/ue": derive_seed(seed, "scramble", "ue"),
    }
    for c in cell_ids:
        seeds[f"split/{c}"] = derive_seed(seed, "split", c)
        seeds[f"augment/{c}"] = derive_seed(seed, "augment", c)
        seeds[f"encode/{c}"] = derive_seed(seed, "encode", c)
    return seeds


def write_manifest(
    out_dir: Path,
    command: str,
    cfg: BaseModel,
    seeds: Dict[str, int],
    inputs: Sequence[PathLike]
) -> Path:
    manifest = RunManifest(
        command=command,
        version=__version__,
        config=cfg.model_dump(mode="json"),
        seeds=seeds,
        inputs={str(p): sha256_file(p) for p in inputs if p is not None and Path(p).exists()},
    )
    return write_json(out_dir / f"manifest_{command}.json", manifest)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _require(path: Optional[str], what: str) -> Path:
    if path is None:
        raise ValueError(f"No {what} configured")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def load_dataset(
    cfg: PipelineConfig,
    data_path: Optional[str],
    labels_path: Optional[str] = None,
    labels_required: bool = False,
    scramble: Optional[bool] = None
) -> CellDataset:
    """
    Load telemetry (and labels), scrambling identifiers if configured.

    scramble overrides cfg.scramble_ids; files written by `train` already
    carry scrambled identifiers and are loaded with scramble=False.
    """
    if scramble is None:
        scramble = cfg.scramble_ids
    with stage("load"):
        ds = load_csv(_require(data_path, "telemetry data file"), strict=cfg.strict_validation)
        if labels_path is not None or labels_required:
            ds = attach_labels(ds, load_labels(_require(labels_path, "labels file")))
        if scramble:
            ds = scramble_ids(ds, cfg.seed)
    return ds


# ---------------------------------------------------------------------------
# Trained classifier (scaler + block + network)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainedClassifier:
    scaler: ScalerParams
    block: ClusterBlock
    model: mlp.MlpModel
    mlp_config: MlpConfig
    assumed: Tuple[int, ...]
    filtered_cells: Tuple[int, ...]
    sorted_encoding: bool = True

    @property
    def cell_max_samples(self) -> int:
        return self.mlp_config.cell_max_samples

    @property
    def input_dim(self) -> int:
        return self.cell_max_samples * self.block.width


def fit_classifier(
    train: CellDataset,
    cfg: PipelineConfig,
    seed: int,
    out_dir: Optional[Path] = None
) -> Tuple[TrainedClassifier, TrainingReport]:
    """
    filter -> convert -> scale -> prior -> clustering block -> encode -> network.

    Every training cell left after filtering needs an expert label.
    """
    warnings: List[RunWarning] = []
    n_loaded = len(train.cell_ids)

    with stage("filter"):
        kept = filter_low_sample_cells(train, cfg.min_samples)
        filtered = sorted(set(train.cell_ids) - set(kept.cell_ids))
        if filtered:
            warnings.append(RunWarning(
                severity="info",
                category="filtered_cells",
                message=f"{len(filtered)} cell(s) below {cfg.min_samples} training samples dropped: {filtered}",
            ))

    with stage("convert"):
        converted = convert_signal_units(kept)

    with stage("scale"):
        scaler = fit_scaler(converted)
        train_norm = apply_scaler(converted, scaler)
        constant = [f for f in scaler.features if scaler.minimum[f] == scaler.maximum[f]]
        if constant:
            warnings.append(RunWarning(
                severity="warning",
                category="constant_feature",
                message=f"Constant training feature(s) mapped to 0.0: {', '.join(constant)}",
            ))
    if out_dir is not None:
        write_progress(out_dir, "Preprocessing complete", 15)

    with stage("prior"):
        aggs = prior.aggregate(train_norm)
        assumed = prior.select_assumed_problematic(aggs, cfg.prior_fraction)
        expert = sorted(c for c, lab in train_norm.labels.items() if lab == CellLabel.PROBLEMATIC)
        if assumed != set(expert):
            warnings.append(RunWarning(
                severity="info",
                category="prior_mismatch",
                message=(
                    f"Prior assumption selected {sorted(assumed)}; expert labels mark {expert} "
                    f"as problematic"
                ),
            ))

    with stage("cluster"):
        block = build_block(
            train_norm,
            assumed,
            cfg.mlp.cell_max_samples,
            seed,
            ks=cfg.cluster_ks,
            algorithms=cfg.cluster_algorithms,
            n_jobs=cfg.n_jobs,
        )
    if out_dir is not None:
        write_progress(out_dir, f"Clustering block trained ({len(block)} models)", 50)

    with stage("encode"):
        cell_ids, X = encode_dataset(
            block, train_norm, cfg.mlp.cell_max_samples, seed, sort_assignments=cfg.sorted_encoding
        )

    with stage("train"):
        unlabeled = [c for c in cell_ids if c not in train_norm.labels]
        if unlabeled:
            raise ValueError(f"Training cells without expert labels: {unlabeled[:10]}")
        y = [int(train_norm.labels[c]) for c in cell_ids]
        mlp_cfg = cfg.mlp.model_copy(update={"input_dim": X.shape[1], "seed": seed})
        model = mlp.train(mlp_cfg, X, y)
        train_acc = float(np.mean((mlp.problematic_scores(model, X) > cfg.classification_threshold) == np.array(y)))
    if out_dir is not None:
        write_progress(out_dir, "Network trained", 90)

    clf = TrainedClassifier(
        scaler=scaler,
        block=block,
        model=model,
        mlp_config=mlp_cfg,
        assumed=tuple(sorted(assumed)),
        filtered_cells=tuple(filtered),
        sorted_encoding=cfg.sorted_encoding,
    )
    report = TrainingReport(
        n_cells_loaded=n_loaded,
        n_cells_trained=len(cell_ids),
        filtered_cells=filtered,
        n_train_samples=len(train_norm),
        n_test_samples=0,
        assumed_problematic=sorted(assumed),
        expert_problematic=expert,
        n_models=len(block),
        block_width=block.width,
        input_dim=X.shape[1],
        layer_widths=list(model.widths),
        best_epoch=model.best_epoch,
        best_loss=model.best_loss,
        loss_history=list(model.loss_history),
        training_accuracy=train_acc,
        seed=seed,
        config_hash=config_hash(cfg),
        warnings=warnings,
    )
    return clf, report


def score_cells(
    clf: TrainedClassifier,
    ds: CellDataset,
    seed: int,
    threshold: float
) -> Tuple[CellDataset, Dict[int, CellLabel], Dict[int, float]]:
    """
    Preprocess with the frozen scaler, encode, and classify every cell.

    Returns:
        (preprocessed dataset, verdicts, problematic scores)
    """
    with stage("scale"):
        norm = prepare_for_model(ds, clf.scaler)
    with stage("encode"):
        cell_ids, X = encode_dataset(
            clf.block, norm, clf.cell_max_samples, seed, sort_assignments=clf.sorted_encoding
        )
        if X.shape[1] != clf.model.input_dim:
            raise ValueError(
                f"Encoding width {X.shape[1]} does not match network input {clf.model.input_dim} "
                f"(stale bundle?)"
            )
    with stage("classify"):
        scores = dict(zip(cell_ids, (float(s) for s in mlp.problematic_scores(clf.model, X))))
        verdicts = {
            c: CellLabel.PROBLEMATIC if s > threshold else CellLabel.NORMAL
            for c, s in scores.items()
        }
    return norm, verdicts, scores


def evaluate_classifier(
    clf: TrainedClassifier,
    test: CellDataset,
    cfg: PipelineConfig,
    seed: int
) -> Tuple[EvaluationReport, Dict[str, object]]:
    """
    Score the proposed method (and the baseline) on labeled test data.

    Returns:
        (report, details) where details holds per-cell verdicts, scores,
        baseline results and the PRC points
    """
    warnings: List[RunWarning] = []
    with stage("load"):
        dropped = sorted(set(clf.filtered_cells) & set(test.cell_ids))
        unlabeled = sorted(set(test.cell_ids) - set(test.labels))
        if unlabeled:
            warnings.append(RunWarning(
                severity="warning",
                category="general",
                message=f"{len(unlabeled)} test cell(s) without labels are not evaluated: {unlabeled[:10]}",
            ))
        keep = [c for c in test.cell_ids if c in test.labels and c not in set(dropped)]
        if not keep:
            raise ValueError("No labeled test cells left to evaluate")
        test = test.restrict(keep)

    _, verdicts, scores = score_cells(clf, test, seed, cfg.classification_threshold)
    truth = dict(test.labels)

    baseline_scores: Optional[MethodScores] = None
    baseline_result: Dict[int, Tuple[CellLabel, float]] = {}
    if cfg.baseline:
        with stage("baseline"):
            # loaded values: scaling clamps test values outside the training range
            th = baseline.global_averages(test)
            baseline_result = baseline.classify_dataset_baseline(test, th)

    with stage("metrics"):
        proposed = metrics.score_method(verdicts, truth, scores)
        curve = metrics.precision_recall_curve(scores, truth)
        if cfg.baseline:
            baseline_scores = metrics.score_method({c: v for c, (v, _) in baseline_result.items()}, truth)

    report = EvaluationReport(
        proposed=proposed,
        baseline=baseline_scores,
        n_cells=len(truth),
        n_problematic=sum(1 for v in truth.values() if v == CellLabel.PROBLEMATIC),
        n_samples=len(test),
        threshold=cfg.classification_threshold,
        seed=seed,
        config_hash=config_hash(cfg),
        warnings=warnings,
    )
    details = {
        "verdicts": verdicts,
        "scores": scores,
        "truth": truth,
        "baseline": baseline_result,
        "curve": curve,
    }
    logger.info(
        f"Proposed: P={proposed.precision:.3f} R={proposed.recall:.3f} "
        f"F1={proposed.f1:.3f} PRC-AUC={proposed.prc_auc:.3f}"
        + (f" | Baseline: P={baseline_scores.precision:.3f} R={baseline_scores.recall:.3f} "
           f"F1={baseline_scores.f1:.3f}" if baseline_scores else "")
    )
    return report, details


# ---------------------------------------------------------------------------
# Bundle persistence
# ---------------------------------------------------------------------------

def save_bundle(clf: TrainedClassifier, bundle_dir: Path, training_data_sha256: Optional[str]) -> Path:
    bundle_dir.mkdir(parents=True, exist_ok=True)
    save_scaler(clf.scaler, bundle_dir / "scaler.json")
    save_block(clf.block, bundle_dir / "block.json")
    mlp.save_model(clf.model, bundle_dir / "mlp.npz", bundle_dir / "mlp.json", clf.mlp_config)
    return write_json(bundle_dir / "bundle.json", {
        "format_version": BUNDLE_FORMAT_VERSION,
        "version": __version__,
        "input_dim": clf.input_dim,
        "block_width": clf.block.width,
        "n_models": len(clf.block),
        "cell_max_samples": clf.cell_max_samples,
        "feature_columns": list(clf.block.feature_columns),
        "assumed_problematic": list(clf.assumed),
        "filtered_cells": list(clf.filtered_cells),
        "sorted_encoding": clf.sorted_encoding,
        "training_data_sha256": training_data_sha256,
    })


def load_bundle(bundle_dir: PathLike) -> Tuple[TrainedClassifier, Dict[str, object]]:
    """
    Read a bundle written by save_bundle and check its parts agree.

    Raises:
        FileNotFoundError: missing bundle
        ValueError: version or dimension mismatch between the parts
    """
    bundle_dir = Path(bundle_dir)
    meta_path = bundle_dir / "bundle.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"No classifier bundle at {bundle_dir}; run `train` first")
    with open(meta_path) as f:
        meta = json.load(f)
    if meta.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise ValueError(f"Unsupported bundle format {meta.get('format_version')!r} in {meta_path}")

    block = load_block(bundle_dir / "block.json", expected_width=meta["block_width"])
    model = mlp.load_model(bundle_dir / "mlp.npz", bundle_dir / "mlp.json")
    with open(bundle_dir / "mlp.json") as f:
        mlp_cfg = MlpConfig.model_validate(json.load(f)["config"])

    expected = meta["cell_max_samples"] * block.width
    if model.input_dim != expected or meta["input_dim"] != expected or mlp_cfg.cell_max_samples != meta["cell_max_samples"]:
        raise ValueError(
            f"Stale bundle in {bundle_dir}: network expects {model.input_dim} inputs, block and "
            f"cell_max_samples give {meta['cell_max_samples']} x {block.width} = {expected}"
        )
    clf = TrainedClassifier(
        scaler=load_scaler(bundle_dir / "scaler.json"),
        block=block,
        model=model,
        mlp_config=mlp_cfg,
        assumed=tuple(meta["assumed_problematic"]),
        filtered_cells=tuple(meta["filtered_cells"]),
        sorted_encoding=bool(meta.get("sorted_encoding", False)),
    )
    return clf, meta


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def run_generate(synth_cfg: SynthConfig, data_path: PathLike, labels_path: PathLike) -> CellDataset:
    """Generate synthetic telemetry and write the data and labels CSVs."""
    with stage("generate"):
        ds = synthgen.generate(synth_cfg)
    with stage("report"):
        synthgen.save_synth(ds, data_path, labels_path)
    logger.info(f"Wrote {data_path} and {labels_path}")
    return ds


def _split(cfg: PipelineConfig, ds: CellDataset) -> Tuple[CellDataset, CellDataset]:
    with stage("split"):
        if cfg.split_before_train:
            return split_train_test(ds, cfg.train_fraction, cfg.seed)
        empty = CellDataset(frame=ds.frame.iloc[0:0], labels={})
        return ds, empty


def run_preprocess(cfg: PipelineConfig) -> ScalerParams:
    """Split (if configured) and run the preprocessing chain; write the results."""
    out = Path(cfg.output_dir)
    ds = load_dataset(cfg, cfg.data_path)
    train, test = _split(cfg, ds)
    with stage("scale"):
        train_norm, test_norm, scaler = preprocess_split(train, test, cfg.min_samples)
    with stage("report"):
        save_csv(train_norm, out / "preprocessed_train.csv")
        if len(test_norm):
            save_csv(test_norm, out / "preprocessed_test.csv")
        save_scaler(scaler, out / "scaler.json")
        write_manifest(out, "preprocess", cfg, stage_seeds(cfg.seed, ds.cell_ids), [cfg.data_path])
    return scaler


def run_inspect_prior(cfg: PipelineConfig, plot: bool = False) -> Tuple[List[Dict[str, object]], Set[int]]:
    """Prior-assumption table of the training side; prior.csv (+ prior.png)."""
    out = Path(cfg.output_dir)
    ds = load_dataset(cfg, cfg.data_path)
    train, _ = _split(cfg, ds)
    with stage("filter"):
        train = filter_low_sample_cells(train, cfg.min_samples)
    with stage("prior"):
        aggs = prior.aggregate(train)
        selected = prior.select_assumed_problematic(aggs, cfg.prior_fraction)
        rows = prior.prior_table(aggs, cfg.prior_fraction)
    with stage("report"):
        write_rows(out / "prior.csv", rows, list(rows[0]))
        if plot:
            plots.plot_prior(rows, out / "prior.png")
        write_manifest(out, "inspect-prior", cfg, stage_seeds(cfg.seed, ds.cell_ids), [cfg.data_path])
    return rows, selected


def run_train(cfg: PipelineConfig) -> TrainingReport:
    """
    Train a classifier bundle.

    With split_before_train the loaded data is split per cell and the
    test side is written to test.csv / test_labels.csv for `evaluate`.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_progress(out, "Loading data", 0)

    ds = load_dataset(cfg, cfg.data_path, cfg.labels_path, labels_required=True)
    train, test = _split(cfg, ds)
    if cfg.split_before_train:
        with stage("split"):
            save_csv(test, out / "test.csv")
            save_labels(test.labels, out / "test_labels.csv")

    clf, report = fit_classifier(train, cfg, cfg.seed, out_dir=out)
    report = report.model_copy(update={"n_test_samples": len(test)})

    with stage("bundle"):
        save_bundle(clf, out / BUNDLE_DIR, sha256_file(cfg.data_path))
    with stage("report"):
        write_json(out / "train_report.json", report)
        write_manifest(
            out, "train", cfg, stage_seeds(cfg.seed, ds.cell_ids), [cfg.data_path, cfg.labels_path]
        )
    write_progress(out, f"Complete: {report.n_models} models, best epoch {report.best_epoch}", 100)
    logger.info(
        f"Training complete: {len(report.assumed_problematic)} assumed problematic cell(s), "
        f"{report.n_models} clustering models, input {report.input_dim}, "
        f"training accuracy {report.training_accuracy:.3f}"
    )
    return report


def _test_paths(cfg: PipelineConfig) -> Tuple[str, str]:
    out = Path(cfg.output_dir)
    data = cfg.test_data_path or str(out / "test.csv")
    labels = cfg.test_labels_path or str(out / "test_labels.csv")
    return data, labels


def _written_by_train(cfg: PipelineConfig, path: Optional[PathLike]) -> bool:
    """True for the test split that `train` wrote into cfg.output_dir."""
    if path is None:
        return False
    out = Path(cfg.output_dir)
    return any(Path(path).resolve() == (out / name).resolve() for name in ("test.csv", "test_labels.csv"))


def run_evaluate(cfg: PipelineConfig, allow_train_data: bool = False, plot: bool = False) -> EvaluationReport:
    """Evaluate the trained bundle on labeled test data."""
    out = Path(cfg.output_dir)
    with stage("bundle"):
        clf, meta = load_bundle(out / BUNDLE_DIR)

    data_path, labels_path = _test_paths(cfg)
    test = load_dataset(
        cfg, data_path, labels_path, labels_required=True,
        scramble=cfg.scramble_ids and not _written_by_train(cfg, data_path),
    )

    on_train = False
    with stage("load"):
        if meta.get("training_data_sha256") == sha256_file(data_path):
            if not allow_train_data:
                raise ValueError(
                    f"{data_path} is the training data of this bundle; "
                    f"pass --allow-train-data to evaluate on it anyway"
                )
            on_train = True
            logger.warning(f"Evaluating on training data {data_path}; metrics are optimistic")

    report, details = evaluate_classifier(clf, test, cfg, cfg.seed)
    if on_train:
        report = report.model_copy(update={
            "evaluated_on_training_data": True,
            "warnings": report.warnings + [RunWarning(
                severity="critical",
                category="train_data_evaluation",
                message="Evaluation data is the training data; metrics are optimistic.",
            )],
        })

    with stage("report"):
        write_json(out / "evaluation_report.json", report)
        rows = []
        for c in sorted(details["verdicts"]):
            row = {
                "cell_id": c,
                "label": int(details["verdicts"][c]),
                "score": details["scores"][c],
                "truth": int(details["truth"][c]),
            }
            if details["baseline"]:
                verdict, fraction = details["baseline"][c]
                row.update({"baseline_label": int(verdict), "baseline_fraction": fraction})
            rows.append(row)
        write_rows(out / "verdicts.csv", rows, list(rows[0]))
        write_rows(out / "prc.csv", details["curve"], ["cell_id", "threshold", "precision", "recall"])
        if plot:
            plots.plot_prc(details["curve"], report.proposed.prc_auc, out / "prc.png")
        write_manifest(
            out, "evaluate", cfg, stage_seeds(cfg.seed, test.cell_ids),
            [data_path, labels_path, str(out / BUNDLE_DIR / "bundle.json")],
        )
    return report


def run_classify(cfg: PipelineConfig, data_path: Optional[str] = None) -> Dict[int, Tuple[CellLabel, float]]:
    """Classify unlabeled cells with the trained bundle; classification.csv."""
    out = Path(cfg.output_dir)
    with stage("bundle"):
        clf, _ = load_bundle(out / BUNDLE_DIR)
    data_path = data_path or cfg.test_data_path or cfg.data_path
    ds = load_dataset(cfg, data_path, scramble=cfg.scramble_ids and not _written_by_train(cfg, data_path))

    _, verdicts, scores = score_cells(clf, ds, cfg.seed, cfg.classification_threshold)
    with stage("report"):
        rows = [{"cell_id": c, "label": int(verdicts[c]), "score": scores[c]} for c in sorted(verdicts)]
        write_rows(out / "classification.csv", rows, ["cell_id", "label", "score"])
        write_manifest(out, "classify", cfg, stage_seeds(cfg.seed, ds.cell_ids), [data_path])
    logger.info(
        f"Classified {len(rows)} cell(s): "
        f"{sum(1 for r in rows if r['label'] == CellLabel.PROBLEMATIC)} problematic"
    )
    return {c: (verdicts[c], scores[c]) for c in verdicts}


def run_baseline(
    cfg: PipelineConfig,
    data_path: Optional[str] = None,
    labels_path: Optional[str] = None,
    plot: bool = False
) -> Dict[int, Tuple[CellLabel, float]]:
    """
    Threshold baseline on one dataset.

    The baseline always runs on the loaded values: min-max scaling with
    a frozen training range clamps test values and would change the
    global averages. With labels, baseline_report.json holds its scores.
    """
    out = Path(cfg.output_dir)
    data_path = data_path or cfg.data_path
    labels_path = labels_path or cfg.labels_path
    ds = load_dataset(
        cfg, data_path, labels_path, scramble=cfg.scramble_ids and not _written_by_train(cfg, data_path)
    )

    with stage("baseline"):
        th = baseline.global_averages(ds)
        result = baseline.classify_dataset_baseline(ds, th)
        scatter = baseline.baseline_scatter_rows(ds, th)

    with stage("report"):
        rows = [
            {"cell_id": c, "label": int(v), "fraction": f, "t_avg": th.t_avg, "c_avg": th.c_avg}
            for c, (v, f) in sorted(result.items())
        ]
        write_rows(out / "baseline_verdicts.csv", rows, ["cell_id", "label", "fraction", "t_avg", "c_avg"])
        write_rows(out / "baseline_scatter.csv", scatter, ["cell_id", "throughput_kbps", "cqi", "exceeds"])
        if ds.labels:
            labeled = {c: v for c, (v, _) in result.items() if c in ds.labels}
            write_json(out / "baseline_report.json", metrics.score_method(labeled, dict(ds.labels)))
        if plot:
            plot_dir = out / "baseline_plots"
            plot_dir.mkdir(parents=True, exist_ok=True)
            for c, (v, _) in sorted(result.items()):
                plots.plot_baseline_cell(scatter, c, th.t_avg, th.c_avg, v.name.lower(), plot_dir / f"cell_{c}.png")
        write_manifest(out, "baseline", cfg, {"root": cfg.seed}, [data_path, labels_path])
    return result


def run_split_study(
    cfg: PipelineConfig,
    fractions: Sequence[float] = (0.7, 0.9),
    n_seeds: int = 10
) -> SplitStudyReport:
    """
    Mean scores per train fraction over seeds cfg.seed .. cfg.seed + n_seeds - 1.

    Whether the larger training side scores at least as well is reported,
    never enforced. Runs that fail (e.g. a prior selecting no cell) are
    listed and left out of the means.
    """
    out = Path(cfg.output_dir)
    ds = load_dataset(cfg, cfg.data_path, cfg.labels_path, labels_required=True)
    seeds = [cfg.seed + i for i in range(n_seeds)]

    rows: List[SplitStudyRow] = []
    failed: List[str] = []
    for fraction in fractions:
        results = []
        for seed in seeds:
            try:
                with stage("split"):
                    train, test = split_train_test(ds, fraction, seed)
                clf, _ = fit_classifier(train, cfg, seed)
                report, _ = evaluate_classifier(clf, test, cfg, seed)
                results.append(report)
            except PipelineStageError as e:
                logger.warning(f"Split study run fraction={fraction} seed={seed} failed: {e}")
                failed.append(f"fraction={fraction} seed={seed}: {e}")
            write_progress(out, f"Split study fraction {fraction}", int(100 * len(results) / max(len(seeds), 1)))

        def mean(values):
            values = [v for v in values if v is not None]
            return float(np.mean(values)) if values else None

        rows.append(SplitStudyRow(
            train_fraction=fraction,
            n_runs=len(results),
            proposed_precision=mean([r.proposed.precision for r in results]) or 0.0,
            proposed_recall=mean([r.proposed.recall for r in results]) or 0.0,
            proposed_f1=mean([r.proposed.f1 for r in results]) or 0.0,
            proposed_prc_auc=mean([r.proposed.prc_auc for r in results]),
            baseline_f1=mean([r.baseline.f1 if r.baseline else None for r in results]),
        ))

    ordered = sorted(rows, key=lambda r: r.train_fraction)
    report = SplitStudyReport(
        rows=rows,
        seeds=seeds,
        larger_split_not_worse=ordered[-1].proposed_f1 >= ordered[0].proposed_f1,
        failed_runs=failed,
    )
    with stage("report"):
        write_json(out / "split_study.json", report)
        write_manifest(out, "split-study", cfg, {"root": cfg.seed}, [cfg.data_path, cfg.labels_path])
    logger.info(
        "Split study: " + ", ".join(f"{r.train_fraction:.0%} -> F1 {r.proposed_f1:.3f}" for r in ordered)
        + f"; larger split not worse: {report.larger_split_not_worse}"
    )
    return report
