"""Confusion-matrix metrics (OA, AA, Kappa) and repeated-run reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


def confusion_matrix(truth, pred, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predictions (0-based ids)."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def overall_accuracy(cm) -> float:
    """Percentage of correctly classified samples."""
    cm = np.asarray(cm, dtype=np.float64)
    return 100.0 * np.trace(cm) / cm.sum()


def per_class_accuracy(cm) -> np.ndarray:
    """Recall per class in percent; NaN for classes with no test samples."""
    cm = np.asarray(cm, dtype=np.float64)
    support = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(support > 0, 100.0 * np.diag(cm) / support, np.nan)


def average_accuracy(cm) -> float:
    """Mean recall over the classes present in the test split."""
    return float(np.nanmean(per_class_accuracy(cm)))


def kappa(cm) -> float:
    """Cohen's kappa as a fraction in [-1, 1].

    When chance agreement is already 1 (a single class, always predicted)
    the statistic is undefined; that case returns 1.0.
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    p_o = np.trace(cm) / total
    p_e = float(np.dot(cm.sum(axis=0), cm.sum(axis=1))) / (total * total)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


@dataclass
class RunMetrics:
    confusion: np.ndarray

    @property
    def oa(self) -> float:
        return overall_accuracy(self.confusion)

    @property
    def aa(self) -> float:
        return average_accuracy(self.confusion)

    @property
    def kappa(self) -> float:
        return kappa(self.confusion)

    @property
    def per_class(self) -> np.ndarray:
        return per_class_accuracy(self.confusion)


def _mean_std(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    return float(np.mean(values)), float(np.std(values))


@dataclass
class MetricsReport:
    """Mean and (population) standard deviation over repeated runs.

    ``confusion`` is the first run's matrix; every run shares the test
    split, so its row sums are the per-class test counts.
    """

    class_names: list[str]
    per_class: list[tuple[str, float, float]]
    oa: tuple[float, float]
    aa: tuple[float, float]
    kappa: tuple[float, float]
    confusion: np.ndarray
    runs: int
    absent_classes: list[str] = field(default_factory=list)

    @classmethod
    def from_runs(cls, runs: list[RunMetrics], class_names: list[str] | None = None) -> "MetricsReport":
        if not runs:
            raise ValueError("need at least one run")
        k = runs[0].confusion.shape[0]
        names = list(class_names) if class_names else [f"class {i + 1}" for i in range(k)]
        acc = np.array([r.per_class for r in runs])
        per_class = []
        for i, name in enumerate(names):
            col = acc[:, i]
            per_class.append((name, *((np.nan, np.nan) if np.isnan(col).any() else _mean_std(col))))
        absent = [names[i] for i in range(k) if runs[0].confusion[i].sum() == 0]
        return cls(
            class_names=names,
            per_class=per_class,
            oa=_mean_std([r.oa for r in runs]),
            aa=_mean_std([r.aa for r in runs]),
            kappa=_mean_std([r.kappa for r in runs]),
            confusion=runs[0].confusion.copy(),
            runs=len(runs),
            absent_classes=absent,
        )

    def rows(self) -> list[tuple[str, float, float]]:
        return list(self.per_class) + [("OA", *self.oa), ("AA", *self.aa), ("Kappa", *self.kappa)]

    def to_text(self, title: str | None = None) -> str:
        rows = self.rows()
        width = max(len(name) for name, _, _ in rows)
        lines = [title] if title else []
        lines.append(f"{'metric':<{width}}  {'mean':>8}  {'std':>6}")
        for name, mean, std in rows:
            if name == "Kappa":
                lines.append(f"{name:<{width}}  {mean:>8.4f}  {std:>6.4f}")
            else:
                lines.append(f"{name:<{width}}  {mean:>8.2f}  {std:>6.2f}")
        lines.append(f"runs: {self.runs}")
        if self.absent_classes:
            lines.append("absent from test split (excluded from AA): " + ", ".join(self.absent_classes))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        """Header ``metric,mean,std``; per-class rows, then OA, AA (percent) and Kappa (fraction)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "mean", "std"])
        for name, mean, std in self.rows():
            writer.writerow([name, repr(float(mean)), repr(float(std))])
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["true\\pred"] + self.class_names)
        for name, row in zip(self.class_names, self.confusion):
            writer.writerow([name] + [int(v) for v in row])
        return buf.getvalue()
