"""Confusion matrix, SEN/PREC/ACC/F1 and report emission.

Sensitivity is per-class recall TP/(TP+FN); precision TP/(TP+FP); F1 the
harmonic mean.  Macro averaging weighs classes uniformly; weighted
averaging weighs by support.  A class with zero support (or zero
predicted count) contributes 0 to the affected metric and is flagged.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


def confusion_matrix(true_labels, predicted_labels, k: int) -> np.ndarray:
    """KxK counts; rows are true classes, columns predicted classes."""
    t = np.asarray(list(true_labels), dtype=np.int64)
    p = np.asarray(list(predicted_labels), dtype=np.int64)
    if t.shape != p.shape:
        raise DomainError(f"label sequences differ in length: {t.size} vs {p.size}")
    if t.size and (t.min() < 0 or t.max() >= k or p.min() < 0 or p.max() >= k):
        raise DomainError(f"labels outside [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass
class ClassMetrics:
    label: int
    support: int
    predicted: int
    sen: float
    prec: float
    f1: float
    degenerate: bool


@dataclass
class MetricsReport:
    sen: float
    prec: float
    acc: float
    f1: float
    average: str
    total: int
    per_class: list[ClassMetrics] = field(default_factory=list)

    @property
    def degenerate_classes(self) -> list[int]:
        return [c.label for c in self.per_class if c.degenerate]

    def to_dict(self) -> dict:
        return {
            "average": self.average,
            "total": self.total,
            "sen": self.sen,
            "prec": self.prec,
            "acc": self.acc,
            "f1": self.f1,
            "degenerate_classes": self.degenerate_classes,
            "per_class": [
                {"label": c.label, "support": c.support, "predicted": c.predicted,
                 "sen": c.sen, "prec": c.prec, "f1": c.f1, "degenerate": c.degenerate}
                for c in self.per_class
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        per = [ClassMetrics(label=c["label"], support=c["support"],
                            predicted=c["predicted"], sen=c["sen"], prec=c["prec"],
                            f1=c["f1"], degenerate=c["degenerate"])
               for c in doc["per_class"]]
        return cls(sen=doc["sen"], prec=doc["prec"], acc=doc["acc"], f1=doc["f1"],
                   average=doc["average"], total=doc["total"], per_class=per)


def macro_metrics(cm: np.ndarray, average: str = "macro") -> MetricsReport:
    """Per-class metrics reduced by macro or support-weighted averaging."""
    if average not in ("macro", "weighted"):
        raise DomainError(f"average must be macro or weighted, got {average!r}")
    cm = np.asarray(cm, dtype=np.int64)
    k = cm.shape[0]
    if cm.shape != (k, k) or (cm < 0).any():
        raise DomainError(f"confusion matrix must be square and non-negative")
    total = int(cm.sum())
    if total == 0:
        raise DomainError("empty confusion matrix: metrics undefined")
    per_class = []
    for c in range(k):
        tp = int(cm[c, c])
        support = int(cm[c].sum())
        predicted = int(cm[:, c].sum())
        sen = tp / support if support else 0.0
        prec = tp / predicted if predicted else 0.0
        f1 = 2 * prec * sen / (prec + sen) if (prec + sen) else 0.0
        per_class.append(ClassMetrics(label=c, support=support, predicted=predicted,
                                      sen=sen, prec=prec, f1=f1,
                                      degenerate=(support == 0 or predicted == 0)))
    def reduce(values: list[float]) -> float:
        if average == "macro":
            return float(np.mean(values))
        support = np.array([c.support for c in per_class], dtype=np.float64)
        return float((support * np.asarray(values)).sum() / total)

    return MetricsReport(
        sen=reduce([c.sen for c in per_class]),
        prec=reduce([c.prec for c in per_class]),
        acc=float(np.trace(cm) / total),
        f1=reduce([c.f1 for c in per_class]),
        average=average, total=total, per_class=per_class)


_SVG_CELL = 72
_SVG_PAD = 110


def _heatmap_svg(cm: np.ndarray, class_names: list[str]) -> str:
    """Row-normalized heatmap with one rect per cell and per-cell counts."""
    k = cm.shape[0]
    size = _SVG_PAD + k * _SVG_CELL + 20
    rows = cm.sum(axis=1, keepdims=True)
    shade = np.divide(cm, np.maximum(rows, 1), dtype=np.float64)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        '<style>text{font-family:sans-serif;font-size:12px}</style>',
        f'<text x="{_SVG_PAD + k * _SVG_CELL / 2:.1f}" y="20" '
        'text-anchor="middle">predicted</text>',
        f'<text x="16" y="{_SVG_PAD + k * _SVG_CELL / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_SVG_PAD + k * _SVG_CELL / 2:.1f})">true</text>',
    ]
    for j, name in enumerate(class_names):
        x = _SVG_PAD + j * _SVG_CELL + _SVG_CELL / 2
        parts.append(f'<text x="{x:.1f}" y="{_SVG_PAD - 8}" '
                     f'text-anchor="middle">{name}</text>')
    for i, name in enumerate(class_names):
        y = _SVG_PAD + i * _SVG_CELL + _SVG_CELL / 2 + 4
        parts.append(f'<text x="{_SVG_PAD - 8}" y="{y:.1f}" '
                     f'text-anchor="end">{name}</text>')
    for i in range(k):
        for j in range(k):
            x = _SVG_PAD + j * _SVG_CELL
            y = _SVG_PAD + i * _SVG_CELL
            level = int(round(255 * (1.0 - 0.85 * shade[i, j])))
            fill = f"rgb({level},{level},255)"
            parts.append(
                f'<rect class="cell" x="{x}" y="{y}" width="{_SVG_CELL}" '
                f'height="{_SVG_CELL}" fill="{fill}" stroke="#444"/>')
            tcol = "#000" if shade[i, j] < 0.6 else "#fff"
            parts.append(
                f'<text x="{x + _SVG_CELL / 2:.1f}" y="{y + _SVG_CELL / 2 + 4:.1f}" '
                f'text-anchor="middle" fill="{tcol}">{int(cm[i, j])}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(cm: np.ndarray, report: MetricsReport, out_dir, run_id: str,
                class_names: list[str]) -> dict:
    """Write <run-id>.metrics.json, .cm.csv and .cm.svg; returns the paths."""
    k = cm.shape[0]
    if len(class_names) != k:
        raise DomainError(f"{k} classes but {len(class_names)} names")
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "json": os.path.join(out_dir, f"{run_id}.metrics.json"),
        "csv": os.path.join(out_dir, f"{run_id}.cm.csv"),
        "svg": os.path.join(out_dir, f"{run_id}.cm.svg"),
    }
    with open(paths["json"], "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    lines = ["true\\predicted," + ",".join(class_names)]
    for i, name in enumerate(class_names):
        lines.append(name + "," + ",".join(str(int(v)) for v in cm[i]))
    with open(paths["csv"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(paths["svg"], "w", encoding="utf-8") as fh:
        fh.write(_heatmap_svg(cm, class_names))
    return paths
