"""
Evaluation metrics with problematic cells as the positive class.

precision = tp / (tp + fp), recall = tp / (tp + fn), F1 = 2PR / (P + R);
every 0/0 is defined as 0.

PRC AUC is the step-wise average precision: cells are sorted by
descending score (ties by ascending cell_id) and
    AUC = sum_i (R_i - R_(i-1)) * P_i
over every prefix of the ranking. No interpolation, so the value only
depends on the ranking of the scores.
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

from tools.schemas import MethodScores
from utils.telemetry import CellLabel


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _check_keys(preds: Mapping[int, object], truth: Mapping[int, object]) -> None:
    if set(preds) != set(truth):
        only_pred = sorted(set(preds) - set(truth))
        only_truth = sorted(set(truth) - set(preds))
        raise ValueError(
            f"Prediction and truth cover different cells "
            f"(only predicted: {only_pred[:10]}, only labeled: {only_truth[:10]})"
        )


def confusion(preds: Mapping[int, CellLabel], truth: Mapping[int, CellLabel]) -> ConfusionCounts:
    """Confusion counts over cells present in both mappings."""
    _check_keys(preds, truth)
    tp = fp = tn = fn = 0
    for cell_id, actual in truth.items():
        predicted = int(preds[cell_id]) == CellLabel.PROBLEMATIC
        positive = int(actual) == CellLabel.PROBLEMATIC
        if predicted and positive:
            tp += 1
        elif predicted:
            fp += 1
        elif positive:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall (0 when both are 0)."""
    return _ratio(2.0 * precision * recall, precision + recall)


def precision_recall_f1(c: ConfusionCounts) -> Tuple[float, float, float]:
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    return precision, recall, f1_score(precision, recall)


def precision_recall_curve(
    scores: Mapping[int, float],
    truth: Mapping[int, CellLabel]
) -> List[Dict[str, float]]:
    """
    One (threshold, precision, recall) point per ranking prefix.

    The i-th point predicts the i highest-scored cells as problematic;
    its threshold is the score of the last included cell.

    Raises:
        ValueError: mismatched keys or no positive labels
    """
    _check_keys(scores, truth)
    n_pos = sum(1 for v in truth.values() if int(v) == CellLabel.PROBLEMATIC)
    if n_pos == 0:
        raise ValueError("PRC is undefined without problematic cells in the evaluated set")

    ranked = sorted(scores, key=lambda c: (-float(scores[c]), c))
    points = []
    tp = 0
    for i, cell_id in enumerate(ranked, start=1):
        if int(truth[cell_id]) == CellLabel.PROBLEMATIC:
            tp += 1
        points.append({
            "cell_id": cell_id,
            "threshold": float(scores[cell_id]),
            "precision": tp / i,
            "recall": tp / n_pos,
        })
    return points


def prc_auc(scores: Mapping[int, float], truth: Mapping[int, CellLabel]) -> float:
    """Step-wise average precision over the ranking prefixes."""
    auc = 0.0
    prev_recall = 0.0
    for point in precision_recall_curve(scores, truth):
        auc += (point["recall"] - prev_recall) * point["precision"]
        prev_recall = point["recall"]
    return min(auc, 1.0)


def score_method(
    preds: Mapping[int, CellLabel],
    truth: Mapping[int, CellLabel],
    scores: Optional[Mapping[int, float]] = None
) -> MethodScores:
    """Counts, P/R/F1 and (when scores are given) PRC AUC of one method."""
    c = confusion(preds, truth)
    precision, recall, f1 = precision_recall_f1(c)
    return MethodScores(
        precision=precision,
        recall=recall,
        f1=f1,
        prc_auc=prc_auc(scores, truth) if scores is not None else None,
        tp=c.tp,
        fp=c.fp,
        tn=c.tn,
        fn=c.fn,
    )
