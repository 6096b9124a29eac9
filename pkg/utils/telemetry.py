"""
Cell telemetry data model, CSV ingestion and identifier scrambling.

Every record describes four seconds of traffic between one UE and its
serving cell. Records are grouped by cell; an expert label (normal or
problematic) may be attached per cell.

Feature ranges follow the LTE reporting ranges:
- CQI 0-15, PRB and TTI PRB use 0-100 per TTI
- RSRP -140 to -44 dBm, RSRQ -19.5 to -3 dB
- Timing advance in 78 m steps
- Speed range 1-3, time interval 1-4 (6-hour buckets)

Notes:
    * RSRP is interpreted as [-140, -44] dBm. The range printed in the
      source feature table ("-44-140") has its sign inverted; the
      example value -20 dBm in the same table lies outside any valid
      reporting range and is rejected in strict mode.
    * Datasets are treated as immutable once loaded. Operations return
      new CellDataset instances.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from utils.seeding import stage_rng

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# ---------------------------------------------------------------------------
# Feature definitions
# ---------------------------------------------------------------------------

TIMING_ADVANCE_STEP_M = 78.0

# CSV column order (External Interfaces); also the in-memory column order.
CSV_COLUMNS: Tuple[str, ...] = (
    "cell_id",
    "ue_id",
    "cell_data_rate_kbps",
    "cqi",
    "erab_duration_s",
    "frequency_band",
    "load_active",
    "prb",
    "rsrp_dbm",
    "rsrq_db",
    "speed_range",
    "throughput_kbps",
    "time_interval",
    "timing_advance_m",
    "tti_prb_use",
)

IDENTIFIER_COLUMNS: Tuple[str, ...] = ("cell_id", "ue_id")

# Everything the models see: all features except the two identifiers.
MODEL_FEATURES: Tuple[str, ...] = tuple(c for c in CSV_COLUMNS if c not in IDENTIFIER_COLUMNS)

FEATURE_BOUNDS: Dict[str, Dict[str, object]] = {
    "cell_id": {"min": 0.0, "max": None, "integer": True, "unit": "-"},
    "ue_id": {"min": 0.0, "max": None, "integer": True, "unit": "-"},
    "cell_data_rate_kbps": {"min": 0.0, "max": None, "integer": False, "unit": "kbps"},
    "cqi": {"min": 0.0, "max": 15.0, "integer": False, "unit": "-"},
    "erab_duration_s": {"min": 0.0, "max": None, "integer": False, "unit": "s"},
    "frequency_band": {"min": 0.0, "max": None, "integer": True, "unit": "-"},
    "load_active": {"min": 0.0, "max": None, "integer": False, "unit": "-"},
    "prb": {"min": 0.0, "max": 100.0, "integer": False, "unit": "-"},
    "rsrp_dbm": {"min": -140.0, "max": -44.0, "integer": False, "unit": "dBm"},
    "rsrq_db": {"min": -19.5, "max": -3.0, "integer": False, "unit": "dB"},
    "speed_range": {"min": 1.0, "max": 3.0, "integer": True, "unit": "-"},
    "throughput_kbps": {"min": 0.0, "max": None, "integer": False, "unit": "kbps"},
    "time_interval": {"min": 1.0, "max": 4.0, "integer": True, "unit": "-"},
    "timing_advance_m": {"min": 0.0, "max": None, "integer": False, "unit": "m"},
    "tti_prb_use": {"min": 0.0, "max": 100.0, "integer": False, "unit": "-"},
}

INTEGER_COLUMNS: Tuple[str, ...] = tuple(c for c in CSV_COLUMNS if FEATURE_BOUNDS[c]["integer"])

LABEL_COLUMNS: Tuple[str, ...] = ("cell_id", "label")


class CellLabel(IntEnum):
    """Expert verdict for a cell. 1 means throughput-problematic."""

    NORMAL = 0
    PROBLEMATIC = 1


class TelemetryValidationError(ValueError):
    """Schema or range violation in a telemetry or label file."""

    def __init__(self, message: str, row: Optional[int] = None, field_name: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.field = field_name


# ---------------------------------------------------------------------------
# Data classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    """One four-second telemetry record between a UE and its serving cell."""

    cell_id: int
    ue_id: int
    cell_data_rate_kbps: float
    cqi: float
    erab_duration_s: float
    frequency_band: int
    load_active: float
    prb: float
    rsrp_dbm: float
    rsrq_db: float
    speed_range: int
    throughput_kbps: float
    time_interval: int
    timing_advance_m: float
    tti_prb_use: float


@dataclass(frozen=True)
class CellDataset:
    """
    Telemetry samples grouped by cell, with optional expert labels.

    Attributes:
        frame: One row per sample, columns in CSV_COLUMNS order. Row order
            is the file order and is preserved by every operation.
        labels: cell_id -> CellLabel; cells without a verdict are absent.
    """

    frame: pd.DataFrame
    labels: Mapping[int, CellLabel] = field(default_factory=dict)

    def __post_init__(self):
        missing = [c for c in CSV_COLUMNS if c not in self.frame.columns]
        if missing:
            raise ValueError(f"CellDataset frame is missing columns: {', '.join(missing)}")
        frame = self.frame.loc[:, list(CSV_COLUMNS)].reset_index(drop=True)
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "labels", {int(k): CellLabel(int(v)) for k, v in self.labels.items()})

        known = set(frame["cell_id"].unique().tolist())
        unknown = sorted(set(self.labels) - known)
        if unknown:
            raise ValueError(
                f"Labels reference {len(unknown)} cell(s) absent from the samples: "
                f"{unknown[:10]}{' ...' if len(unknown) > 10 else ''}"
            )

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def cell_ids(self) -> List[int]:
        """Distinct cell identifiers, ascending."""
        return sorted(int(c) for c in self.frame["cell_id"].unique())

    @property
    def sample_counts(self) -> Dict[int, int]:
        """Number of samples per cell."""
        counts = self.frame.groupby("cell_id", sort=True).size()
        return {int(k): int(v) for k, v in counts.items()}

    def samples_of(self, cell_id: int) -> pd.DataFrame:
        """Samples of one cell in dataset order (empty frame if unknown)."""
        return self.frame[self.frame["cell_id"] == cell_id].reset_index(drop=True)

    def restrict(self, cell_ids) -> "CellDataset":
        """Keep only the given cells (samples and labels)."""
        keep = set(int(c) for c in cell_ids)
        frame = self.frame[self.frame["cell_id"].isin(keep)]
        labels = {c: lab for c, lab in self.labels.items() if c in keep}
        return CellDataset(frame=frame, labels=labels)

    def with_frame(self, frame: pd.DataFrame) -> "CellDataset":
        """Same labels, new samples (labels of vanished cells dropped)."""
        present = set(int(c) for c in frame["cell_id"].unique())
        labels = {c: lab for c, lab in self.labels.items() if c in present}
        return CellDataset(frame=frame, labels=labels)

    def iter_samples(self) -> Iterator[Sample]:
        """Yield Sample records in dataset order."""
        for row in self.frame.itertuples(index=False):
            values = row._asdict()
            for col in INTEGER_COLUMNS:
                values[col] = int(values[col])
            yield Sample(**values)


def attach_labels(ds: CellDataset, labels: Mapping[int, CellLabel]) -> CellDataset:
    """Attach expert labels; every labeled cell must exist in the samples."""
    return CellDataset(frame=ds.frame, labels=dict(labels))


def samples_to_frame(samples: Sequence[Sample]) -> pd.DataFrame:
    """Build a dataset frame from Sample records."""
    rows = [asdict(s) for s in samples]
    return _typed_frame(pd.DataFrame(rows, columns=list(CSV_COLUMNS)))


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------

def _typed_frame(frame: pd.DataFrame) -> pd.DataFrame:
    frame = frame.copy()
    for col in CSV_COLUMNS:
        if col in INTEGER_COLUMNS:
            frame[col] = frame[col].astype(np.int64)
        else:
            frame[col] = frame[col].astype(np.float64)
    return frame


def _violations(col: str, values: pd.Series) -> pd.Series:
    """Boolean mask of rows that violate the column's constraints."""
    bounds = FEATURE_BOUNDS[col]
    bad = pd.Series(False, index=values.index)
    if bounds["min"] is not None:
        bad |= values < bounds["min"]
    if bounds["max"] is not None:
        bad |= values > bounds["max"]
    if bounds["integer"]:
        bad |= (values - values.round()).abs() > 1e-9
    if col == "timing_advance_m":
        steps = values / TIMING_ADVANCE_STEP_M
        bad |= (steps - steps.round()).abs() * TIMING_ADVANCE_STEP_M > 1e-9
    return bad


def _clamp(col: str, values: pd.Series) -> pd.Series:
    bounds = FEATURE_BOUNDS[col]
    values = values.clip(lower=bounds["min"], upper=bounds["max"])
    if bounds["integer"]:
        values = values.round()
    if col == "timing_advance_m":
        values = (values / TIMING_ADVANCE_STEP_M).round() * TIMING_ADVANCE_STEP_M
    return values


def _describe_range(col: str) -> str:
    bounds = FEATURE_BOUNDS[col]
    low = bounds["min"]
    high = "inf" if bounds["max"] is None else bounds["max"]
    text = f"[{low}, {high}]"
    if bounds["integer"]:
        text += " (integer)"
    if col == "timing_advance_m":
        text += f" (multiple of {TIMING_ADVANCE_STEP_M:g} m)"
    return text


def validate_frame(raw: pd.DataFrame, *, strict: bool = True, source: str = "<frame>") -> pd.DataFrame:
    """
    Validate and type a raw (string or numeric) telemetry frame.

    Args:
        raw: Frame with exactly the CSV_COLUMNS (any order)
        strict: Reject out-of-range values (True) or clamp them (False)
        source: Name used in error messages

    Returns:
        Typed frame in CSV_COLUMNS order

    Raises:
        TelemetryValidationError: missing/unknown columns, empty data,
            non-numeric or (strict mode) out-of-range values. Row numbers
            are 1-based data rows (the header is not counted).
    """
    columns = [str(c).strip() for c in raw.columns]
    missing = [c for c in CSV_COLUMNS if c not in columns]
    if missing:
        raise TelemetryValidationError(
            f"{source}: missing column(s) {', '.join(missing)}. "
            f"Expected header: {','.join(CSV_COLUMNS)}",
            field_name=missing[0],
        )
    unknown = [c for c in columns if c not in CSV_COLUMNS]
    if unknown:
        raise TelemetryValidationError(
            f"{source}: unknown column(s) {', '.join(unknown)}. "
            f"Expected header: {','.join(CSV_COLUMNS)}",
            field_name=unknown[0],
        )
    raw = raw.set_axis(columns, axis=1)
    if raw.empty:
        raise TelemetryValidationError(f"{source}: file contains no data rows")

    numeric = pd.DataFrame(index=raw.index)
    for col in CSV_COLUMNS:
        parsed = pd.to_numeric(raw[col], errors="coerce")
        bad = parsed.isna() | ~np.isfinite(parsed.astype(float))
        if bad.any():
            idx = int(np.flatnonzero(bad.to_numpy())[0])
            raise TelemetryValidationError(
                f"{source}: row {idx + 1}, field '{col}': "
                f"non-numeric or missing value {raw[col].iloc[idx]!r}",
                row=idx + 1,
                field_name=col,
            )
        numeric[col] = parsed.astype(float)

    first_bad: Optional[Tuple[int, str]] = None
    total_bad = 0
    for col in CSV_COLUMNS:
        bad = _violations(col, numeric[col])
        n_bad = int(bad.sum())
        if not n_bad:
            continue
        total_bad += n_bad
        idx = int(np.flatnonzero(bad.to_numpy())[0])
        if first_bad is None or idx < first_bad[0]:
            first_bad = (idx, col)
        if not strict:
            numeric[col] = _clamp(col, numeric[col])
            logger.warning(
                f"{source}: clamped {n_bad} value(s) of '{col}' into {_describe_range(col)}"
            )

    if strict and first_bad is not None:
        idx, col = first_bad
        raise TelemetryValidationError(
            f"{source}: row {idx + 1}, field '{col}': value {numeric[col].iloc[idx]!r} "
            f"outside allowed range {_describe_range(col)} "
            f"({total_bad} violation(s) in total; use clamp mode to coerce)",
            row=idx + 1,
            field_name=col,
        )

    return _typed_frame(numeric[list(CSV_COLUMNS)])


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def load_csv(path: PathLike, *, strict: bool = True) -> CellDataset:
    """
    Load a telemetry CSV into an unlabeled CellDataset.

    Args:
        path: CSV file with the CSV_COLUMNS header, UTF-8, '.' decimals
        strict: Reject out-of-range values (default) or clamp them

    Returns:
        CellDataset with one sample per data row, in file order

    Raises:
        FileNotFoundError: path does not exist
        TelemetryValidationError: see validate_frame; also empty files
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Telemetry file not found: {path}")

    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise TelemetryValidationError(f"{path}: file is empty") from exc

    frame = validate_frame(raw, strict=strict, source=str(path))
    logger.info(
        f"Loaded {len(frame)} samples across {frame['cell_id'].nunique()} cells from {path.name}"
    )
    return CellDataset(frame=frame)


def save_csv(ds: CellDataset, path: PathLike) -> Path:
    """Write samples in file order; floats use shortest round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ds.frame.to_csv(path, index=False, columns=list(CSV_COLUMNS), lineterminator="\n")
    return path


def load_labels(path: PathLike) -> Dict[int, CellLabel]:
    """
    Load expert labels (cell_id,label; 1 = problematic).

    An empty file (or header only) yields an empty mapping, in which case
    classification runs unevaluated.

    Raises:
        FileNotFoundError: path does not exist
        TelemetryValidationError: bad header, duplicate cell_id, label
            outside {0, 1}
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Labels file not found: {path}")

    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        logger.info(f"{path.name} is empty; no labels loaded")
        return {}

    columns = [str(c).strip() for c in raw.columns]
    if columns != list(LABEL_COLUMNS):
        raise TelemetryValidationError(
            f"{path}: expected header 'cell_id,label', got '{','.join(columns)}'"
        )
    raw = raw.set_axis(columns, axis=1)

    labels: Dict[int, CellLabel] = {}
    for idx, (cell_text, label_text) in enumerate(zip(raw["cell_id"], raw["label"]), start=1):
        try:
            cell_id = int(str(cell_text).strip())
        except ValueError as exc:
            raise TelemetryValidationError(
                f"{path}: row {idx}: cell_id {cell_text!r} is not an integer",
                row=idx, field_name="cell_id",
            ) from exc
        if cell_id < 0:
            raise TelemetryValidationError(
                f"{path}: row {idx}: cell_id {cell_id} is negative", row=idx, field_name="cell_id"
            )
        if str(label_text).strip() not in ("0", "1"):
            raise TelemetryValidationError(
                f"{path}: row {idx}: label {label_text!r} must be 0 (normal) or 1 (problematic)",
                row=idx, field_name="label",
            )
        if cell_id in labels:
            raise TelemetryValidationError(
                f"{path}: row {idx}: duplicate cell_id {cell_id}", row=idx, field_name="cell_id"
            )
        labels[cell_id] = CellLabel(int(str(label_text).strip()))

    n_prob = sum(1 for v in labels.values() if v == CellLabel.PROBLEMATIC)
    logger.info(f"Loaded {len(labels)} labels ({n_prob} problematic) from {path.name}")
    return labels


def save_labels(labels: Mapping[int, CellLabel], path: PathLike) -> Path:
    """Write labels as cell_id,label sorted by cell_id."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [(int(c), int(labels[c])) for c in sorted(labels)]
    pd.DataFrame(rows, columns=list(LABEL_COLUMNS)).to_csv(path, index=False, lineterminator="\n")
    return path


# ---------------------------------------------------------------------------
# Identifier scrambling
# ---------------------------------------------------------------------------

def _permutation_map(values: pd.Series, rng: np.random.Generator) -> Dict[int, int]:
    distinct = np.sort(values.unique())
    permuted = rng.permutation(len(distinct))
    return {int(old): int(new) for old, new in zip(distinct, permuted)}


def scramble_ids(ds: CellDataset, seed: int) -> CellDataset:
    """
    Replace cell and UE identifiers with seeded dense permutations.

    Each identifier space is mapped bijectively onto 0..n-1 with a
    Fisher-Yates shuffle, so samples sharing an identifier still share
    one afterwards. Labels are re-keyed with the cell mapping.
    """
    cell_map = _permutation_map(ds.frame["cell_id"], stage_rng(seed, "scramble", "cell"))
    ue_map = _permutation_map(ds.frame["ue_id"], stage_rng(seed, "scramble", "ue"))

    frame = ds.frame.copy()
    frame["cell_id"] = frame["cell_id"].map(cell_map).astype(np.int64)
    frame["ue_id"] = frame["ue_id"].map(ue_map).astype(np.int64)
    labels = {cell_map[c]: lab for c, lab in ds.labels.items()}

    logger.info(f"Scrambled {len(cell_map)} cell ids and {len(ue_map)} UE ids")
    return CellDataset(frame=frame, labels=labels)
