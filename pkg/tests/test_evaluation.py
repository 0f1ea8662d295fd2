import math
import random

import pytest

from drllm.evaluation import (
    AblationReport,
    CellReport,
    ConfusionCounts,
    anomaly_rates,
    cell_report,
    compute_auc,
    compute_confusion,
    delta_vs_p3,
    emit_reports,
    f1_recall,
    report_csv,
    report_markdown,
)
from drllm.flow_data import Label
from drllm.prompts import TemplateId
from drllm.reasoning import AnomalyL1, AnomalyL2, ParseFailure, extract_outcome
from oracles import brute_force_auc, direct_f1_recall

A, B = Label.ATTACK, Label.BENIGN
REFERENCE_F1 = [0.7672, 0.7904, 0.8114, 0.7759, 0.8499]
TEMPLATES = [TemplateId.P0, TemplateId.P1, TemplateId.P2, TemplateId.P3prime, TemplateId.P3]


def valid(p):
    return extract_outcome(f"Attack: {p}, Benign: {round(1 - p, 10)}")


def cell(backend, template, f1, recall=0.5, auc=0.5, l1=0.0, l2=0.0):
    return CellReport(backend, template, f1, recall, auc, l1, l2, 100, 0, 0)


class TestConfusion:
    def test_perfect(self):
        c = compute_confusion([(valid(0.9), A), (valid(0.1), B)])
        assert (c.fp, c.fn, c.tp, c.tn) == (0, 0, 1, 1)

    def test_hand_counted_fixture(self):
        pairs = [
            (valid(0.9), A), (valid(0.8), A),
            (valid(0.7), B),
            (valid(0.2), A),
            (AnomalyL1(0.7, 0.5, 0.2), A),
        ]
        c = compute_confusion(pairs)
        assert (c.tp, c.fp, c.fn, c.tn) == (2, 1, 1, 0)
        assert c.total == 4

    def test_all_l2(self):
        assert compute_confusion([(AnomalyL2("no"), A)] * 5) == ConfusionCounts()

    def test_misclassify_mode(self):
        pairs = [(valid(0.9), A), (AnomalyL2("no"), A), (ParseFailure(""), B)]
        c = compute_confusion(pairs, count_anomalies=True)
        assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 1, 0)


class TestF1Recall:
    def test_examples(self):
        f1, recall = f1_recall(ConfusionCounts(tp=2, fp=1, fn=1))
        assert round(f1, 4) == 0.6667 and round(recall, 4) == 0.6667
        assert f1_recall(ConfusionCounts()) == (0.0, 0.0)
        assert f1_recall(ConfusionCounts(tp=7)) == (1.0, 1.0)

    def test_oracle_1000_random(self):
        rng = random.Random(1)
        for _ in range(1000):
            tp, fp, fn, tn = (rng.randrange(0, 50) for _ in range(4))
            assert f1_recall(ConfusionCounts(tp, fp, tn, fn)) == direct_f1_recall(tp, fp, fn)


class TestAUC:
    def test_examples(self):
        assert compute_auc([0.9, 0.8, 0.3, 0.1], [A, A, B, B]) == 1.0
        assert compute_auc([0.9, 0.2, 0.6, 0.1], [A, A, B, B]) == 0.75
        assert compute_auc([0.5, 0.5], [A, B]) == 0.5

    def test_single_class_not_applicable(self):
        assert compute_auc([0.1, 0.9], [A, A]) is None
        assert compute_auc([], []) is None

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            compute_auc([0.1], [A, B])

    def test_oracle_500_random_with_ties(self):
        rng = random.Random(2)
        for _ in range(500):
            n = rng.randint(2, 200)
            scores = [rng.randrange(0, 20) / 19 for _ in range(n)]
            labels = [rng.choice([A, B]) for _ in range(n)]
            expected = brute_force_auc(scores, [lbl is A for lbl in labels])
            got = compute_auc(scores, labels)
            if expected is None:
                assert got is None
            else:
                assert abs(got - expected) <= 1e-12

    def test_monotone_invariance(self):
        rng = random.Random(3)
        for _ in range(100):
            n = rng.randint(2, 100)
            scores = [rng.random() for _ in range(n)]
            labels = [rng.choice([A, B]) for _ in range(n)]
            base = compute_auc(scores, labels)
            for f in (lambda s: s**3, math.exp, lambda s: 2 * s - 7):
                other = compute_auc([f(s) for s in scores], labels)
                assert (base is None and other is None) or abs(base - other) <= 1e-12


class TestRates:
    def test_examples(self):
        assert anomaly_rates([AnomalyL1(0.7, 0.5, 0.2)] * 875 + [valid(0.9)] * 125) == (87.5, 0.0)
        assert anomaly_rates([valid(0.9)] * 10) == (0.0, 0.0)
        outs = [AnomalyL2("x")] * 5 + [ParseFailure("")] * 5 + [valid(0.3)] * 990
        assert anomaly_rates(outs) == (0.0, 1.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            anomaly_rates([])

    def test_rates_sum_to_100(self):
        rng = random.Random(4)
        for _ in range(200):
            n = rng.randint(1, 300)
            outs = [rng.choice([valid(0.6), AnomalyL1(0.7, 0.5, 0.2), AnomalyL2("x"), ParseFailure("")]) for _ in range(n)]
            rep = cell_report("m", TemplateId.P3, [(o, A) for o in outs])
            assert rep.n_total == n
            assert rep.l1_rate + rep.l2_rate + 100 * rep.n_valid / n == pytest.approx(100, abs=1e-9)


def test_cell_report_auc_not_applicable():
    rep = cell_report("m", TemplateId.P0, [(valid(0.9), A), (valid(0.8), A)])
    assert rep.auc is None
    assert AblationReport([rep]).not_applicable == [rep]


def test_reference_delta_row():
    report = AblationReport([cell("deepseek", t, v) for t, v in zip(TEMPLATES, REFERENCE_F1)])
    deltas = [round(report.delta("deepseek", t, "f1"), 2) for t in TEMPLATES]
    assert deltas == [-9.73, -7.00, -4.53, -8.71, 0.0]
    md = emit_reports(report)["report.md"]
    row = next(line for line in md.splitlines() if "| F1 |" in line)
    assert "0.7672 (-9.73%)" in row and "0.7904 (-7.00%)" in row
    assert "0.8114 (-4.53%)" in row and "0.7759 (-8.71%)" in row
    assert row.rstrip(" |").endswith("0.8499")


def test_delta_antisymmetry():
    assert delta_vs_p3(0.5, 0.5) == 0
    assert delta_vs_p3(0.5, 0.6) != 0
    assert delta_vs_p3(None, 0.5) is None
    assert delta_vs_p3(0.5, 0) is None


def test_p3_only_table_has_no_deltas():
    md = report_markdown(AblationReport([cell("m", TemplateId.P3, 0.8)]))
    assert "| m | F1 | 0.8000 |" in md
    assert "| m | Recall | 0.5000 |" in md


def test_two_backends_row_groups():
    cells = [cell(b, t, 0.5 + i / 100) for b in ("gpt", "qwen") for i, t in enumerate(TEMPLATES)]
    md = report_markdown(AblationReport(cells))
    lines = [ln for ln in md.splitlines() if ln.startswith("| gpt") or ln.startswith("| qwen")]
    assert [ln.split("|")[1].strip() for ln in lines] == ["gpt"] * 3 + ["qwen"] * 3 + ["gpt"] * 2 + ["qwen"] * 2
    assert "| Backend | Metric | P0 | P1 | P2 | P3' | P3 |" in md


def test_rates_two_decimals_and_csv():
    rep = AblationReport([cell("m", TemplateId.P0, 0.5, l1=87.6, l2=1.0), cell("m", TemplateId.P3, 0.6, l1=0.5, l2=0.25)])
    md = report_markdown(rep)
    assert "| m | L1 | 87.60 | 0.50 |" in md
    assert "| m | L2 | 1.00 | 0.25 |" in md
    rows = report_csv(rep).splitlines()
    assert rows[0] == "backend,template,metric,value,delta_vs_p3"
    assert "m,P0,f1,0.5000,-16.67" in rows
    assert "m,P3,f1,0.6000,0.00" in rows
    assert "m,P0,l1_rate,87.60," in rows


def test_auc_not_applicable_printed():
    rep = AblationReport([CellReport("m", TemplateId.P3, 0.5, 0.5, None, 0, 0, 1, 0, 0)])
    assert "n/a" in report_markdown(rep)
    assert "m,P3,auc,n/a," in report_csv(rep)


def test_empty_grid_header_only(tmp_path):
    files = emit_reports(AblationReport(), tmp_path)
    md_lines = [ln for ln in files["report.md"].splitlines() if ln.startswith("|")]
    assert all(ln.startswith("| Backend") or ln.startswith("|---") for ln in md_lines)
    assert files["report.csv"] == "backend,template,metric,value,delta_vs_p3\n"
    assert (tmp_path / "report.md").read_text() == files["report.md"]
