"""Classification metrics and the repeated cross-validation harness."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

METRIC_NAMES = ("acc", "bca", "f1_weighted")


@dataclass
class MetricsReport:
    acc: float
    bca: float
    f1_weighted: float
    confusion: np.ndarray

    def as_dict(self) -> dict:
        return {"acc": self.acc, "bca": self.bca, "f1_weighted": self.f1_weighted,
                "confusion": self.confusion.tolist()}


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def compute_metrics(y_true, y_pred, n_classes: int) -> MetricsReport:
    """ACC, balanced accuracy and support-weighted F1.

    Classes without support are left out of the balanced-accuracy mean; a
    class whose precision and recall are both zero has F1 of zero.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0 or y_true.shape != y_pred.shape:
        raise ValueError("need equal-length, non-empty label arrays")
    for arr in (y_true, y_pred):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    cm = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    has = support > 0
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=has)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return MetricsReport(
        acc=float(tp.sum() / y_true.size),
        bca=float(recall[has].mean()),
        f1_weighted=float((f1 * support).sum() / support.sum()),
        confusion=cm,
    )


@dataclass
class CVReport:
    """Per-cell metrics of a folds x repeats run plus their aggregate."""

    cells: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        out: dict[str, dict] = {}
        models = sorted({c["model"] for c in self.cells})
        for model in models:
            rows = [c for c in self.cells if c["model"] == model]
            out[model] = {}
            for m in METRIC_NAMES:
                vals = np.array([r[m] for r in rows])
                out[model][m] = {"mean": float(vals.mean()), "std": float(vals.std())}
        return out

    def to_json(self, config: Mapping | None = None) -> str:
        doc = {"summary": self.summary(), "cells": self.cells}
        if config is not None:
            doc["config"] = dict(config)
        return json.dumps(doc, indent=2, sort_keys=True)

    def write_cells_csv(self, path, config: Mapping | None = None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if config is not None:
                fh.write("# " + json.dumps(dict(config), sort_keys=True) + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["repeat", "fold", "model", *METRIC_NAMES])
            for c in self.cells:
                writer.writerow([c["repeat"], c["fold"], c["model"],
                                 *(f"{c[m]:.6f}" for m in METRIC_NAMES)])


CellFn = Callable[[np.ndarray, np.ndarray, int], Mapping[str, tuple[np.ndarray, np.ndarray]]]


def cv_run(subjects: np.ndarray, cell_fn: CellFn, n_classes: int, folds: int = 3,
           repeats: int = 2, seed: int = 0) -> CVReport:
    """Cross-subject k-fold evaluation repeated with seeds ``seed + r``.

    ``cell_fn(train_idx, test_idx, cell_seed)`` returns, per model name, a
    ``(y_true, y_pred)`` pair on the test indices.
    """
    from .data import make_folds

    subjects = np.asarray(subjects)
    report = CVReport()
    for r in range(repeats):
        fold_of = make_folds(subjects, folds, seed + r)
        for k in range(folds):
            test = np.flatnonzero(fold_of == k)
            train = np.flatnonzero(fold_of != k)
            outputs = cell_fn(train, test, seed + r)
            for model in sorted(outputs):
                y_true, y_pred = outputs[model]
                m = compute_metrics(y_true, y_pred, n_classes)
                report.cells.append({"repeat": r, "fold": k, "model": model, "acc": m.acc,
                                     "bca": m.bca, "f1_weighted": m.f1_weighted})
    return report
