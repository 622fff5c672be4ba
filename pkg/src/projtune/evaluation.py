"""Accuracy and generalization metrics, both total-harmonic-mean conventions,
and base-to-new bookkeeping. Metrics compute in fractions internally and
render in percent with 2 decimals."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ShapeError
from .model import FeatureBank, ProjectionHead, TextClassifier, class_logits, predict

__all__ = [
    "EvalReport", "BaseNewSplit", "accuracy", "harmonic_mean",
    "total_hm_t1", "total_hm_t2", "base_new_evaluate", "evaluate",
]


@dataclass
class EvalReport:
    accuracy: float
    per_class_acc: list[float]
    n_test: int
    config_hash: str = ""
    seed: int = 0
    method: str = ""
    split_tag: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "accuracy": self.accuracy,
            "accuracy_pct": f"{100.0 * self.accuracy:.2f}",
            "per_class_acc": self.per_class_acc,
            "n_test": self.n_test,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "method": self.method,
            "split": self.split_tag,
        }
        payload.update(self.extra)
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_csv_row(self, dataset: str = "synthetic", shots: int = 0,
                   lr: float = 0.0, lam: float = 0.0) -> dict:
        return {"method": self.method, "dataset": dataset, "shots": shots,
                "seed": self.seed, "lr": lr, "lambda": lam,
                "split": self.split_tag, "accuracy": self.accuracy}


CSV_COLUMNS = ["method", "dataset", "shots", "seed", "lr", "lambda", "split",
               "accuracy"]


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


@dataclass
class BaseNewSplit:
    base_class_ids: list[int]
    new_class_ids: list[int]

    def __post_init__(self):
        base, new = set(self.base_class_ids), set(self.new_class_ids)
        if not base or not new:
            raise InvalidInputError("both class groups must be non-empty")
        if base & new:
            raise InvalidInputError("base and new classes must be disjoint")
        k = len(base) + len(new)
        if base | new != set(range(k)):
            raise InvalidInputError("split must cover [0, K) exhaustively")


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise ShapeError("preds and labels must be equal-length and non-empty")
    return float(np.mean(preds == labels))


def per_class_accuracy(preds, labels, n_classes: int) -> list[float]:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    out = []
    for k in range(n_classes):
        mask = labels == k
        out.append(float(np.mean(preds[mask] == k)) if np.any(mask) else 0.0)
    return out


def harmonic_mean(a: float, b: float) -> float:
    if a < 0 or b < 0:
        raise InvalidInputError("harmonic_mean needs non-negative inputs")
    if a == 0 and b == 0:
        raise InvalidInputError("harmonic_mean undefined at (0, 0)")
    if a == 0 or b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


def total_hm_t1(pairs) -> float:
    """Mean over per-dataset harmonic means (ProGrad convention)."""
    if len(pairs) == 0:
        raise InvalidInputError("need at least one (base, new) pair")
    return float(np.mean([harmonic_mean(a, b) for a, b in pairs]))


def total_hm_t2(pairs) -> float:
    """Harmonic mean of the averaged base/new accuracies (MaPLe convention)."""
    if len(pairs) == 0:
        raise InvalidInputError("need at least one (base, new) pair")
    bases = [a for a, _ in pairs]
    news = [b for _, b in pairs]
    return harmonic_mean(float(np.mean(bases)), float(np.mean(news)))


def evaluate(head: ProjectionHead, cls: TextClassifier, bank: FeatureBank,
             labels, method: str = "", seed: int = 0,
             config_hash: str = "", split_tag: str = "") -> EvalReport:
    preds = predict(class_logits(head, cls, bank, view=0))
    labels = np.asarray(labels)
    return EvalReport(
        accuracy=accuracy(preds, labels),
        per_class_acc=per_class_accuracy(preds, labels, cls.n_classes),
        n_test=len(labels), config_hash=config_hash, seed=seed,
        method=method, split_tag=split_tag or bank.split_tag,
    )


def base_new_evaluate(head: ProjectionHead, cls_base: TextClassifier,
                      cls_new: TextClassifier,
                      base_bank: FeatureBank, base_labels,
                      new_bank: FeatureBank, new_labels):
    """Evaluate one head against both classifiers (open-class swap).

    new labels are indices into cls_new. Returns (acc_base, acc_new, hm).
    """
    if cls_base.class_names != cls_new.class_names:
        overlap = set(cls_base.class_names) & set(cls_new.class_names)
        if overlap:
            raise InvalidInputError(f"overlapping class names: {sorted(overlap)}")
    acc_base = accuracy(predict(class_logits(head, cls_base, base_bank, 0)),
                        base_labels)
    acc_new = accuracy(predict(class_logits(head, cls_new, new_bank, 0)),
                       new_labels)
    return acc_base, acc_new, harmonic_mean(acc_base, acc_new)
