"""Per-cell metrics (F1, recall, AUC, anomaly rates) and ablation tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .flow_data import Label
from .prompts import TemplateId
from .reasoning import AnomalyL1, AnomalyL2, InferenceOutcome, ParseFailure, Valid

__all__ = [
    "TEMPLATE_ORDER",
    "AblationReport",
    "CellReport",
    "ConfusionCounts",
    "anomaly_rates",
    "cell_report",
    "compute_auc",
    "compute_confusion",
    "delta_vs_p3",
    "emit_reports",
    "f1_recall",
    "report_csv",
    "report_markdown",
]

TEMPLATE_ORDER = (TemplateId.P0, TemplateId.P1, TemplateId.P2, TemplateId.P3prime, TemplateId.P3)
_TEMPLATE_HEADERS = {
    TemplateId.P0: "P0",
    TemplateId.P1: "P1",
    TemplateId.P2: "P2",
    TemplateId.P3prime: "P3'",
    TemplateId.P3: "P3",
}
METRICS = ("f1", "recall", "auc")
_METRIC_NAMES = {"f1": "F1", "recall": "Recall", "auc": "AUC"}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _anomaly_as_prediction(truth: Label) -> Label:
    # counted as a miss: the opposite of the truth
    return Label.BENIGN if truth is Label.ATTACK else Label.ATTACK


def compute_confusion(pairs: Iterable[tuple[InferenceOutcome, Label]], count_anomalies: bool = False) -> ConfusionCounts:
    """Confusion counts with Attack as the positive class.

    By default only Valid outcomes are counted. With ``count_anomalies`` every
    L1/L2/parse-failure outcome is scored as a misclassification.
    """
    tp = fp = tn = fn = 0
    for outcome, truth in pairs:
        truth = Label.coerce(truth)
        if isinstance(outcome, Valid):
            pred = outcome.parsed.predicted
        elif count_anomalies:
            pred = _anomaly_as_prediction(truth)
        else:
            continue
        if pred is Label.ATTACK:
            if truth is Label.ATTACK:
                tp += 1
            else:
                fp += 1
        elif truth is Label.ATTACK:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def f1_recall(counts: ConfusionCounts) -> tuple[float, float]:
    """(F1, recall); any 0/0 is taken as 0."""
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    if precision + recall == 0:
        return 0.0, recall
    return 2 * precision * recall / (precision + recall), recall


def compute_auc(scores: Sequence[float], labels: Sequence[Label]) -> float | None:
    """Mann-Whitney AUC via mid-ranks; ties between classes count 1/2.

    Returns None when only one class is present (AUC undefined).
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    is_pos = [Label.coerce(lbl) is Label.ATTACK for lbl in labels]
    n_pos = sum(is_pos)
    n_neg = len(is_pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None

    order = sorted(range(len(scores)), key=lambda i: scores[i])
    rank_sum = 0.0
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        mid_rank = (i + j + 2) / 2  # 1-based ranks i+1 .. j+1
        rank_sum += mid_rank * sum(is_pos[order[k]] for k in range(i, j + 1))
        i = j + 1
    u = rank_sum - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


def anomaly_rates(outcomes: Sequence[InferenceOutcome]) -> tuple[float, float]:
    """(L1 %, L2 %) with parse failures folded into L2."""
    total = len(outcomes)
    if total == 0:
        raise ValueError("no outcomes to rate")
    n_l1 = sum(isinstance(o, AnomalyL1) for o in outcomes)
    n_l2 = sum(isinstance(o, (AnomalyL2, ParseFailure)) for o in outcomes)
    return 100 * n_l1 / total, 100 * n_l2 / total


@dataclass(frozen=True)
class CellReport:
    backend: str
    template: TemplateId
    f1: float
    recall: float
    auc: float | None
    l1_rate: float
    l2_rate: float
    n_valid: int
    n_l1: int
    n_l2: int
    n_parse_failure: int = 0

    @property
    def n_total(self) -> int:
        return self.n_valid + self.n_l1 + self.n_l2

    def metric(self, name: str) -> float | None:
        return getattr(self, name)


def cell_report(backend: str, template: TemplateId, pairs: Sequence[tuple[InferenceOutcome, Label]], count_anomalies: bool = False) -> CellReport:
    pairs = list(pairs)
    outcomes = [o for o, _ in pairs]
    f1, recall = f1_recall(compute_confusion(pairs, count_anomalies))
    if count_anomalies:
        scored = [
            (o.p_attack if isinstance(o, Valid) else (0.0 if Label.coerce(t) is Label.ATTACK else 1.0), t)
            for o, t in pairs
        ]
    else:
        scored = [(o.p_attack, t) for o, t in pairs if isinstance(o, Valid)]
    auc = compute_auc([s for s, _ in scored], [t for _, t in scored])
    l1_rate, l2_rate = anomaly_rates(outcomes) if outcomes else (0.0, 0.0)
    n_pf = sum(isinstance(o, ParseFailure) for o in outcomes)
    return CellReport(
        backend=backend,
        template=template,
        f1=f1,
        recall=recall,
        auc=auc,
        l1_rate=l1_rate,
        l2_rate=l2_rate,
        n_valid=sum(isinstance(o, Valid) for o in outcomes),
        n_l1=sum(isinstance(o, AnomalyL1) for o in outcomes),
        n_l2=sum(isinstance(o, AnomalyL2) for o in outcomes) + n_pf,
        n_parse_failure=n_pf,
    )


@dataclass
class AblationReport:
    cells: list[CellReport] = field(default_factory=list)

    @property
    def backends(self) -> list[str]:
        seen: list[str] = []
        for c in self.cells:
            if c.backend not in seen:
                seen.append(c.backend)
        return seen

    @property
    def templates(self) -> list[TemplateId]:
        present = {c.template for c in self.cells}
        return [t for t in TEMPLATE_ORDER if t in present]

    def cell(self, backend: str, template: TemplateId) -> CellReport | None:
        for c in self.cells:
            if c.backend == backend and c.template is template:
                return c
        return None

    def delta(self, backend: str, template: TemplateId, metric: str) -> float | None:
        cell, ref = self.cell(backend, template), self.cell(backend, TemplateId.P3)
        if cell is None or ref is None:
            return None
        return delta_vs_p3(cell.metric(metric), ref.metric(metric))

    @property
    def not_applicable(self) -> list[CellReport]:
        return [c for c in self.cells if c.auc is None]


def delta_vs_p3(value: float | None, p3_value: float | None) -> float | None:
    """Signed percentage change of ``value`` relative to the P3 value."""
    if value is None or p3_value is None or p3_value == 0:
        return None
    return 100 * (value - p3_value) / p3_value


def _fmt_metric(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def _fmt_delta(delta: float | None) -> str:
    if delta is None:
        return ""
    text = f"{delta:+.2f}"
    if text in ("+0.00", "-0.00"):
        text = "0.00"
    return f" ({text}%)"


def report_markdown(report: AblationReport) -> str:
    templates = report.templates
    heads = [_TEMPLATE_HEADERS[t] for t in templates]
    out = ["## Classification metrics", ""]
    out.append("| Backend | Metric | " + " | ".join(heads) + " |")
    out.append("|---|---|" + "---|" * len(heads))
    for backend in report.backends:
        for metric in METRICS:
            row = []
            for t in templates:
                cell = report.cell(backend, t)
                if cell is None:
                    row.append("")
                    continue
                text = _fmt_metric(cell.metric(metric))
                if t is not TemplateId.P3:
                    text += _fmt_delta(report.delta(backend, t, metric))
                row.append(text)
            out.append(f"| {backend} | {_METRIC_NAMES[metric]} | " + " | ".join(row) + " |")
    out += ["", "## Abnormal outputs (%)", ""]
    out.append("| Backend | Metric | " + " | ".join(heads) + " |")
    out.append("|---|---|" + "---|" * len(heads))
    for backend in report.backends:
        for metric, label in (("l1_rate", "L1"), ("l2_rate", "L2")):
            row = []
            for t in templates:
                cell = report.cell(backend, t)
                row.append("" if cell is None else f"{getattr(cell, metric):.2f}")
            out.append(f"| {backend} | {label} | " + " | ".join(row) + " |")
    return "\n".join(out) + "\n"


def report_csv(report: AblationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["backend", "template", "metric", "value", "delta_vs_p3"])
    for backend in report.backends:
        for t in report.templates:
            cell = report.cell(backend, t)
            if cell is None:
                continue
            for metric in METRICS:
                value = cell.metric(metric)
                delta = report.delta(backend, t, metric)
                writer.writerow([
                    backend,
                    t.value,
                    metric,
                    "n/a" if value is None else f"{value:.4f}",
                    "" if delta is None else f"{delta:.2f}",
                ])
            writer.writerow([backend, t.value, "l1_rate", f"{cell.l1_rate:.2f}", ""])
            writer.writerow([backend, t.value, "l2_rate", f"{cell.l2_rate:.2f}", ""])
    return buf.getvalue()


def emit_reports(report: AblationReport, out_dir=None, formats=("markdown", "csv")) -> dict[str, str]:
    """Render the report tables; also write them to ``out_dir`` when given.

    Returns a mapping of file name to text.
    """
    files = {}
    if "markdown" in formats:
        files["report.md"] = report_markdown(report)
    if "csv" in formats:
        files["report.csv"] = report_csv(report)
    if out_dir is not None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text, encoding="utf-8")
    return files
