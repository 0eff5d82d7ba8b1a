"""Accuracy, confusion matrix and false-alarm / false-reject ROC curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import UndefinedCurveError, ValidationError

N_THRESHOLDS = 1001


def accuracy(predictions, labels) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.size == 0:
        raise ValidationError("accuracy of an empty prediction set is undefined")
    if predictions.shape != labels.shape:
        raise ValidationError(f"{predictions.shape} predictions vs {labels.shape} labels")
    return float(np.mean(predictions == labels))


def confusion_matrix(predictions, labels, num_classes: int = 12) -> np.ndarray:
    """``cm[true, predicted]`` counts."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predictions)), 1)
    return cm


def threshold_grid(n: int = N_THRESHOLDS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def _trapezoid(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2))


@dataclass
class RocCurve:
    """Points ordered by increasing false-alarm rate (i.e. decreasing threshold)."""

    false_alarm: np.ndarray
    false_reject: np.ndarray
    thresholds: np.ndarray | None = None
    auc: float = field(default=float("nan"))

    def __post_init__(self):
        self.false_alarm = np.asarray(self.false_alarm, dtype=np.float64)
        self.false_reject = np.asarray(self.false_reject, dtype=np.float64)
        if np.isnan(self.auc):
            self.auc = _trapezoid(self.false_alarm, self.false_reject)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.false_alarm.tolist(), self.false_reject.tolist()))

    def frr_at(self, far) -> np.ndarray:
        """False-reject rate along the curve's polyline at the given false-alarm rates.

        Where the curve has a vertical segment the lower (better) value is
        returned; outside the covered range the end values are held.
        """
        xs, ys = self.false_alarm, self.false_reject
        far = np.atleast_1d(np.asarray(far, dtype=np.float64))
        right = np.searchsorted(xs, far, side="right")
        out = np.empty_like(far)
        for i, (q, r) in enumerate(zip(far, right)):
            if r == 0:
                out[i] = ys[0]
            elif xs[r - 1] == q or r == len(xs):
                out[i] = ys[r - 1]
            else:
                x0, y0, x1, y1 = xs[r - 1], ys[r - 1], xs[r], ys[r]
                out[i] = y0 + (y1 - y0) * (q - x0) / (x1 - x0)
        return out


def roc_for_keyword(scores, positives, thresholds=None) -> RocCurve:
    """Sweep a detection threshold over keyword posteriors.

    At threshold ``t`` a negative with score ``>= t`` is a false alarm and a
    positive with score ``< t`` is a false reject.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape:
        raise ValidationError(f"{scores.shape} scores vs {positives.shape} labels")
    if np.any((scores < 0) | (scores > 1)) or not np.all(np.isfinite(scores)):
        raise ValidationError("scores must lie in [0, 1]")
    n_pos, n_neg = int(positives.sum()), int((~positives).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedCurveError(f"need positives and negatives, got {n_pos} and {n_neg}")
    thresholds = threshold_grid() if thresholds is None else np.sort(np.asarray(thresholds, dtype=np.float64))
    pos = np.sort(scores[positives])
    neg = np.sort(scores[~positives])
    far = (n_neg - np.searchsorted(neg, thresholds, side="left")) / n_neg
    frr = np.searchsorted(pos, thresholds, side="left") / n_pos
    # descending threshold == ascending false-alarm rate
    return RocCurve(far[::-1], frr[::-1], thresholds[::-1])


def vertical_average(curves: list[RocCurve], grid=None) -> RocCurve:
    """Average false-reject rates of several curves on a shared false-alarm grid."""
    if not curves:
        raise ValidationError("cannot average an empty list of curves")
    grid = threshold_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    frr = np.mean([c.frr_at(grid) for c in curves], axis=0)
    return RocCurve(grid, frr)


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    keyword_curves: dict[str, RocCurve]
    average_curve: RocCurve | None
    skipped_keywords: list[str] = field(default_factory=list)

    def write(self, out_dir, class_names, prefix: str = "") -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        summary = out_dir / f"{prefix}summary.csv"
        with open(summary, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            w.writerow(["accuracy", repr(self.accuracy)])
            w.writerow(["examples", int(self.confusion.sum())])
            for name, curve in self.keyword_curves.items():
                w.writerow([f"auc_{name}", repr(curve.auc)])
            if self.average_curve is not None:
                w.writerow(["auc_average", repr(self.average_curve.auc)])
        written.append(summary)
        confusion = out_dir / f"{prefix}confusion.csv"
        with open(confusion, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\predicted"] + list(class_names))
            for name, row in zip(class_names, self.confusion):
                w.writerow([name] + row.tolist())
        written.append(confusion)
        roc = out_dir / f"{prefix}roc_keywords.csv"
        with open(roc, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["keyword", "threshold", "false_alarm_rate", "false_reject_rate"])
            for name, c in self.keyword_curves.items():
                for t, x, y in zip(c.thresholds, c.false_alarm, c.false_reject):
                    w.writerow([name, repr(float(t)), repr(float(x)), repr(float(y))])
        written.append(roc)
        if self.average_curve is not None:
            avg = out_dir / f"{prefix}roc_average.csv"
            with open(avg, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["false_alarm_rate", "false_reject_rate"])
                for x, y in self.average_curve.points:
                    w.writerow([repr(x), repr(y)])
            written.append(avg)
            svg = out_dir / f"{prefix}roc_average.svg"
            svg.write_text(roc_svg({"average": self.average_curve, **self.keyword_curves}))
            written.append(svg)
        return written


def evaluate_posteriors(probabilities, labels, class_names, keywords: int = 10) -> EvalReport:
    """Build the report from ``(N, K)`` posteriors; keywords are classes ``0 .. keywords-1``."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    predictions = probabilities.argmax(axis=1)
    curves, skipped = {}, []
    for k in range(keywords):
        try:
            curves[class_names[k]] = roc_for_keyword(np.clip(probabilities[:, k], 0, 1), labels == k)
        except UndefinedCurveError:
            skipped.append(class_names[k])
    average = vertical_average(list(curves.values())) if curves else None
    return EvalReport(accuracy(predictions, labels),
                      confusion_matrix(predictions, labels, probabilities.shape[1]),
                      curves, average, skipped)


def roc_svg(curves: dict[str, RocCurve], width: int = 480, height: int = 480, margin: int = 50) -> str:
    """Polyline plot of false-reject vs false-alarm rate; the first curve is drawn bold."""
    palette = ["#000000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
    pw, ph = width - 2 * margin, height - 2 * margin

    def xy(x, y):
        return margin + x * pw, margin + (1 - y) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             '<rect width="100%" height="100%" fill="white"/>',
             f'<rect x="{margin}" y="{margin}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for tick in np.linspace(0, 1, 6):
        x, y0 = xy(tick, 0)
        x0, y = xy(0, tick)
        parts.append(f'<text x="{x:.1f}" y="{y0 + 16:.1f}" font-size="11" text-anchor="middle">{tick:.1f}</text>')
        parts.append(f'<text x="{x0 - 6:.1f}" y="{y + 4:.1f}" font-size="11" text-anchor="end">{tick:.1f}</text>')
    parts.append(f'<text x="{width / 2:.0f}" y="{height - 12}" font-size="13" text-anchor="middle">'
                 'false alarm rate</text>')
    parts.append(f'<text x="14" y="{height / 2:.0f}" font-size="13" text-anchor="middle" '
                 f'transform="rotate(-90 14 {height / 2:.0f})">false reject rate</text>')
    for i, (name, curve) in enumerate(curves.items()):
        pts = " ".join("%.2f,%.2f" % xy(x, y) for x, y in curve.points)
        colour = palette[i % len(palette)]
        stroke = 2.5 if i == 0 else 1
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="{stroke}" points="{pts}">'
                     f'<title>{name} (AUC {curve.auc:.4f})</title></polyline>')
        parts.append(f'<text x="{width - margin - 4}" y="{margin + 14 + 13 * i}" font-size="10" '
                     f'text-anchor="end" fill="{colour}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
