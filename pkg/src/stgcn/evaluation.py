"""Binary classification metrics and comparison reports.

RMSE is computed on hard 0/1 predictions, so ``rmse**2 == 1 - accuracy``.
Published (accuracy, RMSE) pairs for this task fit that identity, which is
why probabilities are not used for it. The positive class for precision,
recall and F1 is label 1 (high performance).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class Metrics:
    accuracy: float
    rmse: float
    precision: float
    recall: float
    f1: float
    auc: float
    confusion: np.ndarray  # [[TN, FP], [FN, TP]]
    roc: list[tuple[float, float, float]] = field(default_factory=list)
    f1_undefined: bool = False

    def as_row(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "rmse": self.rmse, "f1": self.f1, "auc": self.auc}


def confusion_matrix(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def roc_curve(scores, truth) -> list[tuple[float, float, float]]:
    """ROC points ``(fpr, tpr, threshold)``, sweeping thresholds over unique scores.

    A sample is called positive when ``score >= threshold``; tied scores move
    together. The curve starts at ``(0, 0, inf)`` and ends at ``(1, 1, min score)``.
    Degenerate single-class inputs use a zero denominator guard (rates stay 0).
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    pos = max(int(truth.sum()), 0)
    neg = len(truth) - pos
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], truth[order]
    points = [(0.0, 0.0, math.inf)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            tp += int(y[j])
            fp += 1 - int(y[j])
            j += 1
        points.append((fp / neg if neg else 0.0, tp / pos if pos else 0.0, float(s[i])))
        i = j
    if points[-1][:2] != (1.0, 1.0) and pos and neg:
        points.append((1.0, 1.0, float(s[-1])))
    return points


def auc_trapezoid(roc: Sequence[tuple[float, float, float]]) -> float:
    fpr = np.array([p[0] for p in roc])
    tpr = np.array([p[1] for p in roc])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def evaluate(predicted_labels, predicted_prob_high, true_labels) -> Metrics:
    pred = np.asarray(predicted_labels, dtype=np.int64)
    prob = np.asarray(predicted_prob_high, dtype=np.float64)
    truth = np.asarray(true_labels, dtype=np.int64)
    if not (len(pred) == len(prob) == len(truth)):
        raise ValueError(f"length mismatch: {len(pred)} labels, {len(prob)} probs, {len(truth)} truths")
    if len(pred) == 0:
        raise ValueError("need at least one prediction")
    for name, arr in (("predicted", pred), ("true", truth)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} labels must be 0 or 1")
    if np.any((prob < 0) | (prob > 1)):
        raise ValueError("probabilities must lie in [0, 1]")

    cm = confusion_matrix(pred, truth)
    (tn, fp), (fn, tp) = cm
    n = len(pred)
    accuracy = (tp + tn) / n
    rmse = math.sqrt(np.mean((pred - truth) ** 2))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    undefined = tp + fp == 0 or tp + fn == 0
    f1 = 0.0 if undefined or precision + recall == 0 else 2 * precision * recall / (precision + recall)
    roc = roc_curve(prob, truth)
    return Metrics(
        accuracy=float(accuracy),
        rmse=float(rmse),
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
        auc=auc_trapezoid(roc),
        confusion=cm,
        roc=roc,
        f1_undefined=bool(undefined),
    )


COLUMNS = ("accuracy", "rmse", "f1", "auc")
_LOWER_IS_BETTER = {"rmse"}


def _best(results: Sequence[tuple[str, Metrics]]) -> dict[str, float]:
    best = {}
    for col in COLUMNS:
        vals = [getattr(m, col) for _, m in results]
        best[col] = min(vals) if col in _LOWER_IS_BETTER else max(vals)
    return best


def compare_models(results: Sequence[tuple[str, Metrics]], fmt: str = "text") -> str:
    """Comparison table, one row per model. Best value per column is starred
    in text output and flagged in a ``best`` column list in CSV output."""
    if not results:
        raise ValueError("need at least one result")
    best = _best(results)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", *COLUMNS, "best"])
        for name, m in results:
            marks = ";".join(c for c in COLUMNS if getattr(m, c) == best[c])
            w.writerow([name, *(repr(float(getattr(m, c))) for c in COLUMNS), marks])
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    width = max(len("model"), *(len(n) for n, _ in results))
    lines = [f"{'model':<{width}}  " + "  ".join(f"{c:>9}" for c in COLUMNS)]
    for name, m in results:
        cells = []
        for c in COLUMNS:
            v = getattr(m, c)
            cells.append(f"{v:8.4f}{'*' if v == best[c] else ' '}")
        lines.append(f"{name:<{width}}  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def parse_comparison_csv(text: str) -> dict[str, dict[str, float]]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return {r["model"]: {c: float(r[c]) for c in COLUMNS} for r in rows}


def roc_to_csv(roc: Sequence[tuple[float, float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fpr", "tpr", "threshold"])
    for fpr, tpr, thr in roc:
        w.writerow([repr(fpr), repr(tpr), repr(thr)])
    return buf.getvalue()
