"""One-vs-rest classification quality rates."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ClassRates:
    """Per-class rates in percent. TP + FN covers the class's ground-truth
    positives; FP + TN covers its negatives."""

    label: str
    tp: float
    fn: float
    fp: float
    tn: float


@dataclass(frozen=True)
class QualityReport:
    per_class: tuple[ClassRates, ...]
    average: ClassRates

    CSV_HEADER = "class,tp_pct,fn_pct,fp_pct,tn_pct"

    def csv_rows(self) -> list[str]:
        rows = [self.CSV_HEADER]
        for rates in (*self.per_class, self.average):
            rows.append(
                f"{rates.label},{rates.tp:.4f},{rates.fn:.4f},"
                f"{rates.fp:.4f},{rates.tn:.4f}"
            )
        return rows


def compute_quality(predictions: dict[int, str], truth: dict[int, str]) -> QualityReport:
    """One-vs-rest TP/FN/FP/TN rates per ground-truth class plus their
    unweighted average.

    Classes are the distinct ground-truth labels. A class with no
    negatives (single-class truth) reports FP 0 / TN 100.
    """
    missing = truth.keys() - predictions.keys()
    if missing:
        raise ValueError(f"{len(missing)} points lack predictions, e.g. {min(missing)}")
    labels = sorted(set(truth.values()))
    total = len(truth)
    rows = []
    for label in labels:
        positives = sum(1 for t in truth.values() if t == label)
        negatives = total - positives
        tp_count = sum(1 for pid, t in truth.items() if t == label and predictions[pid] == label)
        fp_count = sum(1 for pid, t in truth.items() if t != label and predictions[pid] == label)
        tp = 100.0 * tp_count / positives
        fp = 100.0 * fp_count / negatives if negatives else 0.0
        rows.append(ClassRates(label, tp, 100.0 - tp, fp, 100.0 - fp))
    n = len(rows)
    average = ClassRates(
        "average",
        sum(r.tp for r in rows) / n,
        sum(r.fn for r in rows) / n,
        sum(r.fp for r in rows) / n,
        sum(r.tn for r in rows) / n,
    )
    return QualityReport(per_class=tuple(rows), average=average)
