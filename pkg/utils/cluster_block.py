"""
Frozen clustering block and per-cell one-hot encoding.

For every assumed-problematic cell the block holds one model per
(algorithm, k) pair: K-Means and GMM for k = 2..10, i.e. 18 models per
cell. A cell to classify is brought to a fixed sample count, every
sample is run through every model, each assignment is one-hot encoded at
that model's width, and the (samples x W) matrix is flattened row-major
into the network input, W being the sum of all model widths.

Models are never retrained after build_block returns.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from utils.clustering import (
    ClusterModel,
    GmmModel,
    KMeansModel,
    assign_many,
    train_gmm,
    train_kmeans,
)
from utils.preprocess import fix_sample_count
from utils.seeding import derive_seed
from utils.telemetry import MODEL_FEATURES, CellDataset, Sample, samples_to_frame

logger = logging.getLogger(__name__)

BLOCK_FORMAT_VERSION = 1
ALGORITHMS: Tuple[str, ...] = ("kmeans", "gmm")
DEFAULT_KS: Tuple[int, ...] = tuple(range(2, 11))

_TRAINERS = {"kmeans": train_kmeans, "gmm": train_gmm}


@dataclass(frozen=True)
class BlockMember:
    """One frozen clustering model and where it came from."""

    cell_id: int
    algorithm: str
    k: int
    seed: int
    model: ClusterModel


@dataclass(frozen=True)
class ClusterBlock:
    """
    Ordered, immutable ensemble of clustering models.

    Attributes:
        members: Models ordered by cell_id, then algorithm (kmeans, gmm),
            then k
        feature_columns: Column order of the matrices the models were
            trained on
    """

    members: Tuple[BlockMember, ...]
    feature_columns: Tuple[str, ...] = MODEL_FEATURES

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        if not self.members:
            raise ValueError("A clustering block needs at least one model")
        dims = {m.model.dim for m in self.members}
        if dims != {len(self.feature_columns)}:
            raise ValueError(
                f"Model dimensions {sorted(dims)} do not match "
                f"{len(self.feature_columns)} feature columns"
            )

    @property
    def width(self) -> int:
        """Total one-hot width W."""
        return sum(m.k for m in self.members)

    @property
    def source_cells(self) -> List[int]:
        return sorted({m.cell_id for m in self.members})

    def __len__(self) -> int:
        return len(self.members)


# ---------------------------------------------------------------------------
# Build
# ---------------------------------------------------------------------------

def _feature_matrix(samples: Union[pd.DataFrame, Sequence[Sample]], columns: Sequence[str]) -> np.ndarray:
    frame = samples if isinstance(samples, pd.DataFrame) else samples_to_frame(list(samples))
    return frame.loc[:, list(columns)].to_numpy(dtype=float)


def _train_member(cell_id: int, algorithm: str, k: int, X: np.ndarray, seed: int) -> BlockMember:
    member_seed = derive_seed(seed, "cluster", cell_id, algorithm, k)
    model = _TRAINERS[algorithm](X, k, member_seed)
    return BlockMember(cell_id=cell_id, algorithm=algorithm, k=k, seed=member_seed, model=model)


def build_block(
    train: CellDataset,
    assumed: Iterable[int],
    target_samples: int,
    seed: int,
    ks: Sequence[int] = DEFAULT_KS,
    algorithms: Sequence[str] = ALGORITHMS,
    n_jobs: int = 1
) -> ClusterBlock:
    """
    Train len(algorithms) x len(ks) models on each assumed-problematic cell.

    Each cell's samples are fixed to `target_samples` rows (seed tag
    ("augment", cell_id)) and projected onto MODEL_FEATURES. Member seeds
    come from ("cluster", cell_id, algorithm, k), so n_jobs > 1 yields the
    same block as a serial build.

    Args:
        train: Normalized training dataset
        assumed: Assumed-problematic cell ids
        target_samples: Sample count each cell is brought to
        seed: Root seed
        ks: Cluster counts (default 2..10)
        algorithms: Subset of ("kmeans", "gmm")
        n_jobs: joblib worker count

    Raises:
        ValueError: empty assumed set, unknown cell or algorithm, k larger
            than target_samples
    """
    assumed_cells = sorted(int(c) for c in assumed)
    if not assumed_cells:
        raise ValueError(
            "Prior assumption selected no cells; cannot build a clustering block. "
            "Raise prior_fraction or check the training data."
        )
    missing = sorted(set(assumed_cells) - set(train.cell_ids))
    if missing:
        raise ValueError(f"Assumed cells missing from the training data: {missing}")
    unknown = [a for a in algorithms if a not in _TRAINERS]
    if unknown:
        raise ValueError(f"Unknown clustering algorithm(s) {unknown}; expected a subset of {list(ALGORITHMS)}")
    ks = sorted(int(k) for k in ks)
    if not ks or ks[0] < 2 or ks[-1] > target_samples:
        raise ValueError(f"Cluster counts must lie in [2, target_samples={target_samples}], got {ks}")
    algorithms = [a for a in ALGORITHMS if a in algorithms]

    matrices = {}
    for cell_id in assumed_cells:
        fixed = fix_sample_count(
            train.samples_of(cell_id), target_samples, derive_seed(seed, "augment", cell_id)
        )
        matrices[cell_id] = _feature_matrix(fixed, MODEL_FEATURES)

    grid = [(c, a, k) for c in assumed_cells for a in algorithms for k in ks]
    logger.info(
        f"Training clustering block: {len(assumed_cells)} cell(s) x {len(algorithms) * len(ks)} "
        f"models = {len(grid)} models (n_jobs={n_jobs})"
    )
    members = Parallel(n_jobs=n_jobs)(
        delayed(_train_member)(c, a, k, matrices[c], seed) for c, a, k in grid
    )

    block = ClusterBlock(members=tuple(members), feature_columns=MODEL_FEATURES)
    logger.info(f"Clustering block ready: {len(block)} models, one-hot width W={block.width}")
    return block


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def encode_cell(
    block: ClusterBlock,
    samples: Union[pd.DataFrame, Sequence[Sample]],
    target_samples: int,
    seed: int,
    sort_assignments: bool = False
) -> np.ndarray:
    """
    Flattened one-hot encoding of one cell.

    Args:
        block: Frozen clustering block
        samples: One cell's normalized samples
        target_samples: Row count after fix_sample_count
        seed: Seed for dropping surplus samples
        sort_assignments: Sort each model's cluster indices before one-hot
            encoding; the vector then depends only on the per-model cluster
            histogram, not on sample order

    Returns:
        Vector of length target_samples * block.width with exactly one 1
        per (sample, model)
    """
    if len(samples) == 0:
        raise ValueError("Cannot encode a cell without samples")

    fixed = fix_sample_count(samples, target_samples, seed)
    X = _feature_matrix(fixed, block.feature_columns)

    encoded = np.zeros((target_samples, block.width))
    rows = np.arange(target_samples)
    offset = 0
    for member in block.members:
        assigned = assign_many(member.model, X)
        if sort_assignments:
            assigned = np.sort(assigned)
        encoded[rows, offset + assigned] = 1.0
        offset += member.k
    return encoded.reshape(-1)


def encode_dataset(
    block: ClusterBlock,
    ds: CellDataset,
    target_samples: int,
    seed: int,
    sort_assignments: bool = False
) -> Tuple[List[int], np.ndarray]:
    """
    Encode every cell of a dataset (seed tag ("encode", cell_id)).

    Returns:
        (ascending cell ids, matrix with one encoded row per cell)
    """
    cell_ids = ds.cell_ids
    if not cell_ids:
        raise ValueError("Cannot encode an empty dataset")
    rows = [
        encode_cell(block, ds.samples_of(c), target_samples, derive_seed(seed, "encode", c), sort_assignments)
        for c in cell_ids
    ]
    logger.info(f"Encoded {len(cell_ids)} cell(s) into {target_samples * block.width}-dim inputs")
    return cell_ids, np.vstack(rows)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _model_to_dict(model: ClusterModel) -> dict:
    if isinstance(model, KMeansModel):
        return {
            "centroids": np.asarray(model.centroids).tolist(),
            "inertia": model.inertia,
            "n_iter": model.n_iter,
        }
    return {
        "weights": np.asarray(model.weights).tolist(),
        "means": np.asarray(model.means).tolist(),
        "variances": np.asarray(model.variances).tolist(),
        "log_likelihood": model.log_likelihood,
        "n_iter": model.n_iter,
    }


def _model_from_dict(algorithm: str, k: int, seed: int, data: dict) -> ClusterModel:
    if algorithm == "kmeans":
        return KMeansModel(
            k=k,
            centroids=np.asarray(data["centroids"], dtype=float),
            inertia=float(data["inertia"]),
            seed=seed,
            n_iter=int(data["n_iter"]),
        )
    return GmmModel(
        k=k,
        weights=np.asarray(data["weights"], dtype=float),
        means=np.asarray(data["means"], dtype=float),
        variances=np.asarray(data["variances"], dtype=float),
        log_likelihood=float(data["log_likelihood"]),
        seed=seed,
        n_iter=int(data["n_iter"]),
    )


def save_block(block: ClusterBlock, path: Union[str, Path]) -> Path:
    """Write the block as versioned JSON (parameters, seeds, feature order)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": BLOCK_FORMAT_VERSION,
        "feature_columns": list(block.feature_columns),
        "width": block.width,
        "members": [
            {
                "cell_id": m.cell_id,
                "algorithm": m.algorithm,
                "k": m.k,
                "seed": m.seed,
                "params": _model_to_dict(m.model),
            }
            for m in block.members
        ],
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)
    return path


def load_block(path: Union[str, Path], expected_width: Optional[int] = None) -> ClusterBlock:
    """
    Read a block written by save_block.

    Raises:
        ValueError: unsupported format version or width mismatch
    """
    with open(path) as f:
        payload = json.load(f)

    version = payload.get("format_version")
    if version != BLOCK_FORMAT_VERSION:
        raise ValueError(f"Unsupported clustering block format {version!r} in {path}")

    block = ClusterBlock(
        members=tuple(
            BlockMember(
                cell_id=int(m["cell_id"]),
                algorithm=m["algorithm"],
                k=int(m["k"]),
                seed=int(m["seed"]),
                model=_model_from_dict(m["algorithm"], int(m["k"]), int(m["seed"]), m["params"]),
            )
            for m in payload["members"]
        ),
        feature_columns=tuple(payload["feature_columns"]),
    )
    if block.width != payload["width"] or (expected_width is not None and block.width != expected_width):
        raise ValueError(
            f"Clustering block in {path} has width {block.width}, expected "
            f"{expected_width if expected_width is not None else payload['width']}"
        )
    return block
