"""Per-combination evaluation, ACER, and report serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch

from .data import DropoutPattern, ModalityDataset, enumerate_patterns


class BinaryErrorBreakdown(NamedTuple):
    apcer: float
    bpcer: float
    acer: float


def acer(predictions, labels) -> BinaryErrorBreakdown:
    """Attack (label 1) and bona fide (label 0) error rates and their mean."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    attack = labels == 1
    bona = labels == 0
    if not attack.any() or not bona.any():
        raise ValueError("ACER needs both attack (1) and bona fide (0) samples")
    if not (attack | bona).all():
        raise ValueError("ACER is defined for binary labels only")
    n_a, n_b = int(attack.sum()), int(bona.sum())
    e_a, e_b = int((predictions[attack] != 1).sum()), int((predictions[bona] != 0).sum())
    # one division from integer counts keeps hand-countable cases exact
    return BinaryErrorBreakdown(e_a / n_a, e_b / n_b, (e_a * n_b + e_b * n_a) / (2 * n_a * n_b))


@dataclass
class ReportRow:
    pattern: str
    error_rate: float  # percent
    acer: float | None  # percent; None when there are more than two classes
    n: int


@dataclass
class CombinationReport:
    rows: list[ReportRow]

    @property
    def average(self) -> ReportRow:
        err = float(np.mean([r.error_rate for r in self.rows]))
        acers = [r.acer for r in self.rows]
        avg_acer = None if any(a is None for a in acers) else float(np.mean(acers))
        return ReportRow("average", err, avg_acer, int(round(np.mean([r.n for r in self.rows]))))

    def row(self, pattern: str) -> ReportRow:
        for r in self.rows:
            if r.pattern == pattern:
                return r
        raise KeyError(pattern)

    def metric(self, name="error_rate") -> dict[str, float]:
        return {r.pattern: getattr(r, name) for r in self.rows}

    def __eq__(self, other):
        return isinstance(other, CombinationReport) and self.rows == other.rows


@torch.no_grad()
def predict(model, features, pattern) -> np.ndarray:
    """Logits of the deployment head under one pattern forced on every sample."""
    model.eval()
    present = getattr(pattern, "present", pattern)
    with torch.no_grad():
        return model(features, present)[1].cpu().numpy()


def evaluate_combinations(model, test_set: ModalityDataset, m: int | None = None,
                          names: Sequence[str] | None = None) -> CombinationReport:
    if len(test_set) == 0:
        raise ValueError("test set is empty")
    m = m or test_set.num_modalities
    _, full = enumerate_patterns(m)
    x = [torch.as_tensor(f, dtype=torch.float64) for f in test_set.features]
    labels = np.asarray(test_set.labels)
    k = getattr(model, "num_classes", None) or int(labels.max()) + 1
    rows = []
    for p in full:
        pred = predict(model, x, p).argmax(axis=1)
        err = 100.0 * float(np.mean(pred != labels))
        a = 100.0 * acer(pred, labels).acer if k == 2 else None
        rows.append(ReportRow(p.label(names), err, a, len(labels)))
    return CombinationReport(rows)


def weak_average(report: CombinationReport, omega: Sequence[DropoutPattern], names=None,
                 metric="error_rate") -> float:
    """Mean metric over the rows belonging to ``omega``."""
    labels = {p.label(names) for p in omega}
    return float(np.mean([getattr(r, metric) for r in report.rows if r.pattern in labels]))


def _fmt(v):
    return "" if v is None else repr(float(v))


def report_to_csv(report: CombinationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pattern", "error_rate", "acer", "n"])
    for r in report.rows + [report.average]:
        w.writerow([r.pattern, _fmt(r.error_rate), _fmt(r.acer), r.n])
    return buf.getvalue()


def report_from_csv(text: str) -> CombinationReport:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != ["pattern", "error_rate", "acer", "n"]:
        raise ValueError(f"unexpected header {header}")
    rows = []
    for pattern, err, a, n in reader:
        if pattern == "average":
            continue
        rows.append(ReportRow(pattern, float(err), float(a) if a else None, int(n)))
    return CombinationReport(rows)


def _row_dict(r):
    return {"pattern": r.pattern, "error_rate": r.error_rate, "acer": r.acer, "n": r.n}


def report_to_json(report: CombinationReport) -> str:
    doc = {"rows": [_row_dict(r) for r in report.rows], "average": _row_dict(report.average)}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def report_from_json(text: str) -> CombinationReport:
    doc = json.loads(text)
    return CombinationReport([ReportRow(**r) for r in doc["rows"]])


def format_table(report: CombinationReport, metric="error_rate") -> str:
    """Plain-text rows like ``Depth, 5.87`` plus the average footer."""
    lines = []
    for r in report.rows + [report.average]:
        v = getattr(r, metric)
        lines.append(f"{r.pattern}, {'-' if v is None or math.isnan(v) else f'{v:.2f}'}")
    return "\n".join(lines)


def emit_report(report: CombinationReport, fmt: str, path, logits=None, labels=None):
    """Write ``report`` as csv, json or a plot (png/pdf/svg by extension).

    For ``plot``, passing two-class ``logits`` and ``labels`` adds a second
    panel with the softmax probability of class 1 per sample and the 0.5
    decision boundary.
    """
    path = Path(path)
    if fmt == "csv":
        path.write_text(report_to_csv(report))
    elif fmt == "json":
        path.write_text(report_to_json(report))
    elif fmt == "plot":
        _plot(report, path, logits, labels)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def _plot(report, path, logits, labels):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = 2 if logits is not None else 1
    fig, axes = plt.subplots(1, panels, figsize=(5 * panels + 2, 4), squeeze=False)
    ax = axes[0, 0]
    names = [r.pattern for r in report.rows]
    ax.bar(range(len(names)), [r.error_rate for r in report.rows], color="tab:blue")
    ax.axhline(report.average.error_rate, color="k", ls="--", lw=1, label="average")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("error rate (%)")
    ax.legend()
    if logits is not None:
        logits = np.asarray(logits)
        z = logits - logits.max(axis=1, keepdims=True)
        p1 = np.exp(z[:, 1]) / np.exp(z).sum(axis=1)
        labels = np.asarray(labels)
        jitter = np.random.default_rng(0).uniform(-0.4, 0.4, size=len(p1))
        ax = axes[0, 1]
        for c, color in ((0, "tab:blue"), (1, "tab:orange")):
            sel = labels == c
            ax.scatter(p1[sel], jitter[sel], s=6, color=color, label=f"class {c}")
        ax.axvline(0.5, color="k", lw=1)
        ax.set_xlim(0, 1)
        ax.set_yticks([])
        ax.set_xlabel("normalized logit")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
