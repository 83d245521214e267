"""Classification quality metrics and prediction export.

Convention throughout: confusion matrix rows are the true (geologist)
facies, columns are the predicted (machine) facies, both ordered 1..9.
All rate arithmetic runs in plain Python over exact integer counts, so
results are reproducible to the last bit.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import ops
from .errors import DataFormatError, ShapeError
from .network import Checkpoint, model_forward
from .welldata import (FACIES_CODES, N_FACIES, FaciesTable, Well,
                       apply_standardizer, window_matrix)

CONFIDENCE_HIGH = 0.7
CONFIDENCE_LOW = 0.5


@dataclass
class ConfusionMatrix:
    """9x9 integer counts; counts[t][p] pairs true facies t+1 with predicted p+1."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (N_FACIES, N_FACIES):
            raise ShapeError(f"confusion matrix must be 9x9, got {counts.shape}")
        if (counts < 0).any():
            raise ShapeError("confusion matrix counts must be >= 0")
        self.counts = counts

    def count(self, true_facies: int, predicted_facies: int) -> int:
        return int(self.counts[true_facies - 1, predicted_facies - 1])

    @property
    def support(self) -> np.ndarray:
        """Samples per true class (row sums)."""
        return self.counts.sum(axis=1)

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())


def _check_labels(name, labels):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 1 or labels.max() > N_FACIES):
        raise DataFormatError(f"{name} labels must lie in 1..{N_FACIES}")
    return labels.astype(np.int64)


def confusion(true_labels, predicted_labels) -> ConfusionMatrix:
    """Count every (true, predicted) pair."""
    t = _check_labels("true", true_labels)
    p = _check_labels("predicted", predicted_labels)
    if t.shape != p.shape:
        raise ShapeError(f"label lengths differ: {t.shape} vs {p.shape}")
    counts = np.zeros((N_FACIES, N_FACIES), dtype=np.int64)
    np.add.at(counts, (t - 1, p - 1), 1)
    return ConfusionMatrix(counts)


@dataclass
class PRFReport:
    """Per-class precision/recall/F1 plus the two standard averages.

    A 0/0 rate resolves to 0 and sets the class's undefined flag; the
    macro average runs over classes with support > 0 only, while the
    weighted average scales each F1 by its support.
    """

    precision: list
    recall: list
    f1: list
    undefined: list
    macro_f1: float
    weighted_f1: float


def precision_recall_f1(cm: ConfusionMatrix) -> PRFReport:
    precision, recall, f1, undefined = [], [], [], []
    support = [int(s) for s in cm.support]
    for f in range(N_FACIES):
        tp = int(cm.counts[f, f])
        fp = int(cm.counts[:, f].sum()) - tp
        fn = support[f] - tp
        flagged = False
        if tp + fp:
            p = tp / (tp + fp)
        else:
            p, flagged = 0.0, True
        if tp + fn:
            r = tp / (tp + fn)
        else:
            r, flagged = 0.0, True
        if p + r:
            score = 2 * p * r / (p + r)
        else:
            score, flagged = 0.0, True
        precision.append(p)
        recall.append(r)
        f1.append(score)
        undefined.append(flagged)
    present = [f for f in range(N_FACIES) if support[f] > 0]
    macro = sum(f1[f] for f in present) / len(present) if present else 0.0
    total = sum(support)
    weighted = sum(f1[f] * support[f] for f in present) / total if total else 0.0
    return PRFReport(precision, recall, f1, undefined, macro, weighted)


def accuracy(true_labels, predicted_labels) -> float:
    t = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    if t.shape != p.shape:
        raise ShapeError(f"label lengths differ: {t.shape} vs {p.shape}")
    return int((t == p).sum()) / len(t) if len(t) else 0.0


def adjacent_accuracy(true_labels, predicted_labels,
                      table: Optional[FaciesTable] = None) -> float:
    """Fraction predicted exactly right or within the adjacency map."""
    table = table or FaciesTable()
    t = _check_labels("true", true_labels)
    p = _check_labels("predicted", predicted_labels)
    if t.shape != p.shape:
        raise ShapeError(f"label lengths differ: {t.shape} vs {p.shape}")
    if not len(t):
        return 0.0
    hits = sum(1 for ti, pi in zip(t.tolist(), p.tolist())
               if pi == ti or pi in table.adjacency.get(ti, set()))
    return hits / len(t)


@dataclass
class EvalReport:
    """Everything the evaluation suite measures on one labeled dataset."""

    cm: ConfusionMatrix
    prf: PRFReport
    accuracy: float
    adjacent_accuracy: float
    facies_counts: dict
    n_samples: int

    def to_json_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "accuracy": self.accuracy,
            "adjacent_accuracy": self.adjacent_accuracy,
            "macro_f1": self.prf.macro_f1,
            "weighted_f1": self.prf.weighted_f1,
            "per_class": [
                {"facies": f + 1, "code": FACIES_CODES[f],
                 "precision": self.prf.precision[f],
                 "recall": self.prf.recall[f],
                 "f1": self.prf.f1[f],
                 "undefined": self.prf.undefined[f],
                 "support": int(self.cm.support[f])}
                for f in range(N_FACIES)
            ],
            "confusion": self.cm.counts.tolist(),
            "facies_counts": {str(k): v for k, v in self.facies_counts.items()},
        }


def evaluate(true_labels, predicted_labels,
             table: Optional[FaciesTable] = None) -> EvalReport:
    cm = confusion(true_labels, predicted_labels)
    prf = precision_recall_f1(cm)
    support = cm.support
    return EvalReport(
        cm=cm, prf=prf,
        accuracy=accuracy(true_labels, predicted_labels),
        adjacent_accuracy=adjacent_accuracy(true_labels, predicted_labels, table),
        facies_counts={f + 1: int(support[f]) for f in range(N_FACIES)},
        n_samples=cm.n_samples,
    )


# ---------------------------------------------------------------------------
# prediction

@dataclass
class PredictionSeries:
    """Per-depth model output for one well."""

    well_name: str
    depth: np.ndarray
    facies: np.ndarray
    probs: np.ndarray
    confidence: np.ndarray
    bands: list
    true_labels: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.depth)


def confidence_band(confidence: float) -> str:
    if confidence >= CONFIDENCE_HIGH:
        return "high"
    if confidence >= CONFIDENCE_LOW:
        return "medium"
    return "low"


def predict_with_confidence(model: Checkpoint, well: Well,
                            standardizer=None,
                            batch_size: int = 1024) -> PredictionSeries:
    """One prediction per depth sample via centered windows.

    Confidence is the winning softmax probability, annotated with the
    high (>= 0.7) / medium / low (< 0.5) band.
    """
    standardizer = standardizer if standardizer is not None else model.standardizer
    scaled = apply_standardizer(standardizer, well)
    windows = window_matrix(scaled, model.spec.window)
    probs = np.empty((len(windows), model.spec.n_classes))
    for start in range(0, len(windows), batch_size):
        chunk = windows[start:start + batch_size]
        logits, _ = model_forward(model.spec, model.params, chunk)
        probs[start:start + len(chunk)] = ops.softmax(logits.astype(np.float64))
    facies = probs.argmax(axis=1).astype(np.int64) + 1
    confidence = probs.max(axis=1)
    bands = [confidence_band(c) for c in confidence]
    labels = None if well.labels is None else well.labels.copy()
    return PredictionSeries(well.name, well.depth.copy(), facies, probs,
                            confidence, bands, true_labels=labels)


# ---------------------------------------------------------------------------
# export

def export_plot_data(report: EvalReport, predictions, out_dir,
                     train_counts: Optional[dict] = None) -> list:
    """Write plot-ready CSVs; returns the paths written.

    facies_column.csv carries the per-depth series, confusion.csv the
    9x9 counts with per-class rates appended, facies_counts.csv the
    class totals in training versus evaluated data.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = predictions if isinstance(predictions, list) else [predictions]
    paths = []

    column_path = out / "facies_column.csv"
    with open(column_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["well", "depth", "predicted", "true", "confidence", "band"])
        for s in series:
            for i in range(len(s)):
                true = "" if s.true_labels is None else int(s.true_labels[i])
                writer.writerow([s.well_name, repr(float(s.depth[i])),
                                 int(s.facies[i]), true,
                                 repr(float(s.confidence[i])), s.bands[i]])
    paths.append(column_path)

    confusion_path = out / "confusion.csv"
    with open(confusion_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true"] + list(FACIES_CODES)
                        + ["precision", "recall", "f1"])
        for f in range(N_FACIES):
            writer.writerow([FACIES_CODES[f]]
                            + [int(c) for c in report.cm.counts[f]]
                            + [repr(report.prf.precision[f]),
                               repr(report.prf.recall[f]),
                               repr(report.prf.f1[f])])
    paths.append(confusion_path)

    counts_path = out / "facies_counts.csv"
    with open(counts_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["facies", "code", "train_count", "eval_count"])
        for f in range(1, N_FACIES + 1):
            train = 0 if train_counts is None else int(train_counts.get(f, 0))
            writer.writerow([f, FACIES_CODES[f - 1], train,
                             report.facies_counts[f]])
    paths.append(counts_path)
    return paths


def write_metrics_json(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")
