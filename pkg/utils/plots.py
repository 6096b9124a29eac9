"""
PNG figures for inspect-prior, baseline and evaluate (--plot).

- Prior scatter: per-cell average throughput vs average CQI with the
  selected high-CQI / low-throughput cells highlighted
- Baseline scatter: samples of one cell with the threshold-exceeding
  samples highlighted and the verdict in the title
- Precision-recall curve with its AUC
"""

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def plot_prior(rows: Sequence[Mapping[str, object]], path: PathLike) -> Path:
    """Scatter of prior_table rows; selected cells in a second color."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for selected, color, label in ((0, "tab:blue", "other cells"), (1, "tab:red", "assumed problematic")):
        pts = [r for r in rows if r["selected"] == selected]
        if pts:
            ax.scatter(
                [r["t_avg_cell"] for r in pts],
                [r["c_avg_cell"] for r in pts],
                c=color, s=18, label=label,
            )
    ax.set_xlabel("Average throughput per cell")
    ax.set_ylabel("Average CQI per cell")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info(f"Wrote {path}")
    return path


def plot_baseline_cell(
    rows: Sequence[Mapping[str, object]],
    cell_id: int,
    t_avg: float,
    c_avg: float,
    verdict: str,
    path: PathLike
) -> Path:
    """Samples of one cell against the global thresholds."""
    path = Path(path)
    cell_rows = [r for r in rows if r["cell_id"] == cell_id]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for flag, color, label in ((0, "tab:gray", "within thresholds"), (1, "gold", "exceeds thresholds")):
        pts = [r for r in cell_rows if r["exceeds"] == flag]
        if pts:
            ax.scatter([r["throughput_kbps"] for r in pts], [r["cqi"] for r in pts], c=color, s=10, label=label)
    ax.axvline(t_avg, color="k", linestyle="--", linewidth=0.8)
    ax.axhline(c_avg, color="k", linestyle="--", linewidth=0.8)
    ax.set_xlabel("Throughput")
    ax.set_ylabel("CQI")
    ax.set_title(f"Cell {cell_id}: {verdict}")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_prc(points: List[Dict[str, float]], auc: float, path: PathLike) -> Path:
    """Step-wise precision-recall curve."""
    path = Path(path)
    recall = [0.0] + [p["recall"] for p in points]
    precision = [points[0]["precision"]] + [p["precision"] for p in points]
    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.step(recall, precision, where="post")
    ax.set_xlim(0.0, 1.02)
    ax.set_ylim(0.0, 1.02)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_title(f"PRC AUC = {auc:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info(f"Wrote {path}")
    return path
