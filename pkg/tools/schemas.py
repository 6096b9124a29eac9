"""
Pydantic Schemas for the celltriage pipeline

Defines the configuration models (synthetic data, network, pipeline) and
the structured reports written by the train / evaluate / split-study
commands. All configs reject unknown keys so typos in JSON config files
fail loudly instead of silently falling back to defaults.

Hyperparameter surface:
- Cell max samples 25, 50 or 100 (default 25)
- Units per layer 25, 50 or 100 (default 100)
- Hidden layers 0, 1, 3 or 4 (default 1)
- Decreasing units (default True)
- Learning rate 0.001, at most 100 epochs, one sample per update step
- L1 on the last layer, off unless l1_regularization is set
"""

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator, model_validator

DEFAULT_L1_LAMBDA = 1e-4


class RunWarning(BaseModel):
    """
    Structured warning attached to reports.

    Allows programmatic handling (e.g. flagging a report produced on
    training data) instead of requiring log parsing.
    """

    severity: Literal["info", "warning", "critical"] = Field(
        description="Warning severity level"
    )

    category: Literal[
        "constant_feature", "filtered_cells", "train_data_evaluation",
        "prior_mismatch", "general"
    ] = Field(
        description="Warning category for filtering/routing"
    )

    message: str = Field(
        description="Human-readable warning message"
    )

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "severity": "warning",
                    "category": "train_data_evaluation",
                    "message": "Evaluation data has the same sha256 as the training data; metrics are optimistic."
                }
            ]
        }
    }


class SynthConfig(BaseModel):
    """Parameters of the seeded synthetic telemetry generator."""

    model_config = ConfigDict(extra="forbid")

    n_cells: int = Field(
        default=53,
        ge=2,
        description="Number of cells to generate"
    )

    n_problematic: int = Field(
        default=6,
        ge=0,
        description="Number of planted throughput-problematic cells"
    )

    ues_per_cell: Tuple[int, int] = Field(
        default=(10, 25),
        description="Inclusive range of distinct UEs per cell"
    )

    samples_per_ue: Tuple[int, int] = Field(
        default=(15, 45),
        description="Inclusive range of 4-second samples per UE"
    )

    seed: int = Field(
        default=20230601,
        description="Root seed of the generator"
    )

    noise: float = Field(
        default=0.5,
        ge=0.0,
        le=2.0,
        description="Noise level scaling CQI spread and throughput log-normal sigma"
    )

    congested_fraction: float = Field(
        default=0.25,
        ge=0.0,
        le=1.0,
        description="Share of normal cells given high load and reduced throughput"
    )

    @field_validator('ues_per_cell', 'samples_per_ue')
    @classmethod
    def validate_range(cls, v, info):
        """Ranges must be positive and ordered."""
        lo, hi = v
        if lo < 1 or hi < lo:
            raise ValueError(f"{info.field_name} must satisfy 1 <= low <= high, got {v}")
        return v

    @model_validator(mode='after')
    def validate_planted_count(self):
        if self.n_problematic > self.n_cells:
            raise ValueError(
                f"n_problematic ({self.n_problematic}) cannot exceed n_cells ({self.n_cells})"
            )
        return self


class MlpConfig(BaseModel):
    """
    Network hyperparameters.

    input_dim is filled in once the clustering block is built
    (cell_max_samples x block width).
    """

    model_config = ConfigDict(extra="forbid")

    input_dim: Optional[int] = Field(
        default=None,
        ge=1,
        description="Flattened encoding length; set by the pipeline"
    )

    units_per_layer: int = Field(
        default=100,
        ge=1,
        description="Width U_1 of the first hidden layer"
    )

    hidden_layers: int = Field(
        default=1,
        ge=0,
        description="Hidden layer count L"
    )

    decreasing_units: bool = Field(
        default=True,
        description="Shrink hidden layers after the first"
    )

    halving: bool = Field(
        default=False,
        description="With decreasing_units, use U_l = U_(l-1) / 2 instead of U_(l-1) / 2^l"
    )

    learning_rate: PositiveFloat = Field(
        default=0.001,
        description="Gradient descent step size"
    )

    max_epochs: int = Field(
        default=100,
        ge=1,
        description="Upper bound on training epochs"
    )

    l1_lambda: float = Field(
        default=0.0,
        ge=0.0,
        description="L1 coefficient on output-layer weights (0 = off)"
    )

    l1_regularization: bool = Field(
        default=False,
        description=f"Enable L1 on the output layer; an unset l1_lambda becomes {DEFAULT_L1_LAMBDA}"
    )

    batch_size: Optional[int] = Field(
        default=1,
        ge=1,
        description="Mini-batch size (1 = per-sample updates); None trains on the full batch"
    )

    cell_max_samples: int = Field(
        default=25,
        ge=2,
        description="Samples per cell after augmentation (rows of the encoding)"
    )

    seed: int = Field(
        default=0,
        description="Seed for weight initialization and batch order"
    )

    @model_validator(mode='after')
    def apply_l1_default(self):
        if self.l1_regularization and self.l1_lambda == 0.0:
            self.l1_lambda = DEFAULT_L1_LAMBDA
        return self


class PipelineConfig(BaseModel):
    """
    Full pipeline configuration, loaded from a JSON config file.

    CLI flags --seed and --out override `seed` and `output_dir`.
    """

    data_path: Optional[str] = Field(
        default=None,
        description="Telemetry CSV (labeled via labels_path for train/evaluate)"
    )

    labels_path: Optional[str] = Field(
        default=None,
        description="Expert labels CSV (cell_id,label)"
    )

    test_data_path: Optional[str] = Field(
        default=None,
        description="Test telemetry CSV; defaults to the split written by train"
    )

    test_labels_path: Optional[str] = Field(
        default=None,
        description="Test labels CSV; defaults to the split written by train"
    )

    output_dir: str = Field(
        default="runs/default",
        description="Directory receiving bundle, reports and logs"
    )

    train_fraction: float = Field(
        default=0.7,
        gt=0.0,
        lt=1.0,
        description="Per-cell share of samples used for training"
    )

    split_before_train: bool = Field(
        default=True,
        description="Split data_path into train/test sides inside run_train"
    )

    seed: int = Field(
        default=0,
        description="Root seed fanned out to every stochastic stage"
    )

    min_samples: int = Field(
        default=100,
        ge=1,
        description="Cells with fewer training samples are dropped"
    )

    prior_fraction: float = Field(
        default=0.30,
        gt=0.0,
        lt=1.0,
        description="Top-CQI / low-throughput share used by the prior assumption"
    )

    cluster_ks: List[int] = Field(
        default_factory=lambda: list(range(2, 11)),
        min_length=1,
        description="Cluster counts of the clustering block"
    )

    cluster_algorithms: List[Literal["kmeans", "gmm"]] = Field(
        default_factory=lambda: ["kmeans", "gmm"],
        min_length=1,
        description="Clustering algorithms of the clustering block"
    )

    n_jobs: int = Field(
        default=1,
        description="joblib workers for clustering-block training (-1 = all cores)"
    )

    sorted_encoding: bool = Field(
        default=True,
        description="Sort each clustering model's per-sample assignments before one-hot encoding"
    )

    mlp: MlpConfig = Field(
        default_factory=MlpConfig,
        description="Network hyperparameters"
    )

    baseline: bool = Field(
        default=True,
        description="Also run the threshold baseline during evaluation"
    )

    strict_validation: bool = Field(
        default=True,
        description="Reject out-of-range telemetry instead of clamping"
    )

    scramble_ids: bool = Field(
        default=False,
        description="Replace cell and UE identifiers with seeded permutations on load"
    )

    classification_threshold: float = Field(
        default=0.5,
        ge=0.0,
        le=1.0,
        description="Problematic iff score exceeds this threshold"
    )

    @field_validator('cluster_ks')
    @classmethod
    def validate_ks(cls, v):
        if any(k < 2 for k in v):
            raise ValueError(f"cluster_ks entries must be >= 2, got {v}")
        if len(set(v)) != len(v):
            raise ValueError(f"cluster_ks contains duplicates: {v}")
        return sorted(v)

    @field_validator('n_jobs')
    @classmethod
    def validate_n_jobs(cls, v):
        """joblib accepts positive worker counts or negative counts relative to the cores."""
        if v == 0:
            raise ValueError("n_jobs must be >= 1 or negative (-1 = all cores), got 0")
        return v

    @model_validator(mode='after')
    def validate_paths(self):
        """Referenced paths must be distinct; ks must fit the augmented cell."""
        paths = [
            p for p in (self.data_path, self.labels_path, self.test_data_path, self.test_labels_path)
            if p is not None
        ]
        if len(set(paths)) != len(paths):
            raise ValueError(f"data/label paths must be distinct, got {paths}")
        if max(self.cluster_ks) > self.mlp.cell_max_samples:
            raise ValueError(
                f"Largest cluster count {max(self.cluster_ks)} exceeds "
                f"mlp.cell_max_samples={self.mlp.cell_max_samples}"
            )
        return self

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "examples": [
                {
                    "data_path": "data/synth.csv",
                    "labels_path": "data/synth_labels.csv",
                    "output_dir": "runs/synth",
                    "train_fraction": 0.7,
                    "seed": 7,
                    "mlp": {"units_per_layer": 100, "hidden_layers": 1, "batch_size": 1, "cell_max_samples": 25}
                }
            ]
        }
    )


class MethodScores(BaseModel):
    """Confusion counts and scores of one classification method."""

    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    f1: float = Field(ge=0.0, le=1.0)
    prc_auc: Optional[float] = Field(
        default=None,
        ge=0.0,
        le=1.0,
        description="Area under the precision-recall curve (None for methods without scores)"
    )
    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    tn: int = Field(ge=0)
    fn: int = Field(ge=0)


class EvaluationReport(BaseModel):
    """Side-by-side scores of the proposed method and the baseline."""

    proposed: MethodScores
    baseline: Optional[MethodScores] = None
    n_cells: int = Field(ge=0, description="Evaluated cells")
    n_problematic: int = Field(ge=0, description="Truly problematic evaluated cells")
    n_samples: int = Field(ge=0, description="Evaluated samples")
    threshold: float
    seed: int
    config_hash: str
    evaluated_on_training_data: bool = False
    warnings: List[RunWarning] = Field(default_factory=list)


class TrainingReport(BaseModel):
    """Summary of one training run."""

    n_cells_loaded: int
    n_cells_trained: int
    filtered_cells: List[int]
    n_train_samples: int
    n_test_samples: int
    assumed_problematic: List[int]
    expert_problematic: List[int]
    n_models: int
    block_width: int
    input_dim: int
    layer_widths: List[int]
    best_epoch: int
    best_loss: float
    loss_history: List[float]
    training_accuracy: float
    seed: int
    config_hash: str
    warnings: List[RunWarning] = Field(default_factory=list)


class SplitStudyRow(BaseModel):
    """Mean scores over seeds for one train fraction."""

    train_fraction: float
    n_runs: int
    proposed_precision: float
    proposed_recall: float
    proposed_f1: float
    proposed_prc_auc: Optional[float]
    baseline_f1: Optional[float]


class SplitStudyReport(BaseModel):
    """Effect of the training-set size on the scores."""

    rows: List[SplitStudyRow]
    seeds: List[int]
    larger_split_not_worse: bool = Field(
        description="Mean F1 of the largest train fraction >= mean F1 of the smallest (informational)"
    )
    failed_runs: List[str] = Field(default_factory=list)


class RunManifest(BaseModel):
    """Everything needed to reproduce a run."""

    command: str
    version: str
    config: Dict[str, object]
    seeds: Dict[str, int]
    inputs: Dict[str, str] = Field(description="input path -> sha256")
