"""End-to-end experiment runs over the backend x template x record grid.

Output directory layout::

    trace.log      one JSON object per line and per (backend, template, record)
    outcomes.csv   parsed outcomes, sorted by (backend, template, record_index)
    report.md      metric and anomaly tables
    report.csv     long-form metric rows
    run_manifest   config snapshot and input content hash
    mock_sidecar.csv  ground truth behind every mock answer (mock backends only)
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from . import __version__
from .backend import AuthError, BackendError, MockBackend, make_backend
from .cache import CachedBackend, ResponseCache
from .config import RunConfig
from .evaluation import TEMPLATE_ORDER, AblationReport, cell_report, emit_reports
from .flow_data import Dataset, Label, load_dataset, preprocess, sample, select_features, synthetic_flows
from .knowledge import compute_profile, render_knowledge_text
from .prompts import PROMPT_VERSION, TemplateId, compose, render_token_text
from .reasoning import AnomalyL1, InferenceOutcome, Valid, extract_outcome, run_role_reasoning

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentResult",
    "OutcomeRow",
    "RunAborted",
    "load_trace",
    "outcomes_csv",
    "prepare_data",
    "report_from_trace",
    "run_ablation",
    "run_experiment",
]

TRACE_FILE = "trace.log"
OUTCOMES_FILE = "outcomes.csv"
MANIFEST_FILE = "run_manifest"
SIDECAR_FILE = "mock_sidecar.csv"


class RunAborted(RuntimeError):
    """Too many records failed at the backend."""


@dataclass(frozen=True)
class OutcomeRow:
    backend: str
    template: TemplateId
    record_index: int
    true_label: Label
    outcome: InferenceOutcome

    @property
    def sort_key(self):
        return (self.backend, TEMPLATE_ORDER.index(self.template), self.record_index)


@dataclass
class ExperimentResult:
    config: RunConfig
    rows: list[OutcomeRow]
    report: AblationReport
    errors: list[dict] = field(default_factory=list)
    backend_calls: int = 0
    cache_hits: int = 0
    requests: int = 0
    clients: dict = field(default_factory=dict)
    output_dir: Path | None = None


def _git_blob_hash(path: Path) -> str:
    data = path.read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def prepare_data(config: RunConfig) -> tuple[Dataset, Dataset]:
    """Return (evaluation dataset, dataset the knowledge profile is built from)."""
    if config.dataset:
        full = preprocess(load_dataset(config.dataset, config.label_column))
        if config.features:
            full = select_features(full, config.features)
        n = config.records
        evaluation = sample(full, n, config.seed, config.stratified) if n and n < len(full) else full
    else:
        evaluation = full = synthetic_flows(config.records or 1000, config.seed)
        if config.features:
            evaluation = full = select_features(full, config.features)
    profiled = full if config.profile_scope == "full" else evaluation
    return evaluation, profiled


def _input_hash(config: RunConfig) -> str:
    if config.dataset:
        return _git_blob_hash(Path(config.dataset))
    return f"synthetic:{config.records or 1000}:{config.seed}"


def _run_key(config: RunConfig, input_hash: str) -> str:
    snap = config.snapshot()
    for volatile in ("concurrency_limit", "output_dir", "cache_path", "error_ceiling"):
        snap.pop(volatile, None)
    blob = json.dumps([snap, input_hash, PROMPT_VERSION], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _fmt_float(value) -> str:
    return "" if value is None else repr(float(value))


def _outcome_fields(outcome: InferenceOutcome) -> dict:
    if isinstance(outcome, Valid):
        return {
            "variant": "valid",
            "p_attack": outcome.p_attack,
            "p_benign": outcome.p_benign,
            "predicted": outcome.parsed.predicted.value,
            "sum_deviation": None,
        }
    if isinstance(outcome, AnomalyL1):
        return {
            "variant": "l1",
            "p_attack": outcome.p_attack,
            "p_benign": outcome.p_benign,
            "predicted": None,
            "sum_deviation": outcome.sum_deviation,
        }
    return {"variant": outcome.variant, "p_attack": None, "p_benign": None, "predicted": None, "sum_deviation": None}


def outcomes_csv(rows: Iterable[OutcomeRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["backend", "template", "record_index", "true_label", "variant", "p_attack", "p_benign", "predicted", "sum_deviation"]
    )
    for row in sorted(rows, key=lambda r: r.sort_key):
        f = _outcome_fields(row.outcome)
        writer.writerow([
            row.backend,
            row.template.value,
            row.record_index,
            row.true_label.value,
            f["variant"],
            _fmt_float(f["p_attack"]),
            _fmt_float(f["p_benign"]),
            f["predicted"] or "",
            _fmt_float(f["sum_deviation"]),
        ])
    return buf.getvalue()


def _build_report(rows: list[OutcomeRow], count_anomalies: bool) -> AblationReport:
    groups: dict[tuple[str, TemplateId], list] = {}
    for row in sorted(rows, key=lambda r: r.sort_key):
        groups.setdefault((row.backend, row.template), []).append((row.outcome, row.true_label))
    cells = [cell_report(b, t, pairs, count_anomalies) for (b, t), pairs in groups.items()]
    return AblationReport(cells)


def load_trace(path, eps_sum: float = 0.01) -> list[OutcomeRow]:
    """Re-parse a trace log into outcome rows without querying any backend.

    When a key appears more than once the last successful entry wins.
    """
    latest: dict[tuple, OutcomeRow] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError:
                logger.warning("%s: skipping unreadable trace line", path)
                continue
            if entry.get("error"):
                continue
            template = TemplateId.parse(entry["template"])
            row = OutcomeRow(
                entry["backend"],
                template,
                int(entry["record_index"]),
                Label.coerce(entry["true_label"]),
                extract_outcome(entry["r2_text"], eps_sum),
            )
            latest[(row.backend, template, row.record_index)] = row
    return sorted(latest.values(), key=lambda r: r.sort_key)


def _trim_torn_tail(path: Path) -> None:
    """Drop a partial last line left by a run killed mid-write."""
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        with path.open("r+b") as fh:
            fh.truncate(data.rfind(b"\n") + 1)


class _Bounded:
    """Caps in-flight calls to the wrapped backend."""

    def __init__(self, inner, semaphore: threading.Semaphore):
        self.inner = inner
        self.config = inner.config
        self._sem = semaphore

    def complete(self, messages):
        with self._sem:
            return self.inner.complete(messages)


def _write_sidecar(path: Path, clients: Mapping[str, object]) -> None:
    rows = []
    for name, client in clients.items():
        if isinstance(client, MockBackend):
            for d in client.sidecar:
                rows.append((name, d.token_text, d.true_label.value, d.kind, _fmt_float(d.p_attack), _fmt_float(d.p_benign)))
    if not rows:
        return
    rows = sorted(set(rows))
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["backend", "token_text", "true_label", "kind", "p_attack", "p_benign"])
        writer.writerows(rows)


def run_experiment(config: RunConfig, clients: Mapping[str, object] | None = None) -> ExperimentResult:
    """Compose, query and parse every (backend, template, record) cell.

    ``clients`` may supply pre-built backend objects by backend name (used
    for instrumentation); otherwise they are built from the config. Re-running
    into the same output directory with an unchanged config resumes: records
    already in ``trace.log`` are not queried again.
    """
    for bcfg in config.backends:
        if bcfg.kind == "http" and not (clients and bcfg.name in clients):
            if not os.environ.get(bcfg.auth_source, "").strip():
                raise AuthError(f"environment variable {bcfg.auth_source} is not set (API key for backend {bcfg.name!r})")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    evaluation, profiled = prepare_data(config)
    schema = evaluation.schema

    knowledge = None
    if any(t.uses_knowledge for t in config.templates):
        knowledge = render_knowledge_text(compute_profile(profiled), profiled.schema)
    tokens = {r.index: render_token_text(r, schema) for r in evaluation.records}
    truth = {tokens[r.index]: r.label for r in evaluation.records}

    input_hash = _input_hash(config)
    run_key = _run_key(config, input_hash)
    manifest = {
        "version": __version__,
        "prompt_version": PROMPT_VERSION,
        "run_key": run_key,
        "input_hash": input_hash,
        "records": len(evaluation),
        "config": config.snapshot(),
    }
    manifest_path, trace_path = out / MANIFEST_FILE, out / TRACE_FILE
    done: dict[tuple, OutcomeRow] = {}
    if trace_path.exists() and manifest_path.exists():
        try:
            previous = json.loads(manifest_path.read_text(encoding="utf-8")).get("run_key")
        except json.JSONDecodeError:
            previous = None
        if previous == run_key:
            _trim_torn_tail(trace_path)
            for row in load_trace(trace_path, config.eps_sum):
                done[(row.backend, row.template, row.record_index)] = row
        else:
            trace_path.unlink()
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    cache_path = config.resolved_cache_path
    cache = ResponseCache(cache_path) if cache_path else None
    semaphore = threading.Semaphore(config.concurrency_limit)
    raw_clients: dict[str, object] = {}
    wrapped: dict[str, CachedBackend] = {}
    for bcfg in config.backends:
        client = (clients or {}).get(bcfg.name) or make_backend(bcfg, truth)
        if isinstance(client, MockBackend):
            for text, label in truth.items():
                client.register_truth(text, label)
        raw_clients[bcfg.name] = client
        wrapped[bcfg.name] = CachedBackend(_Bounded(client, semaphore), cache)

    labels = {r.index: r.label for r in evaluation.records}
    tasks = [
        (b.name, t, r.index)
        for b in config.backends
        for t in config.templates
        for r in evaluation.records
        if (b.name, t, r.index) not in done
    ]
    total_cells = len(config.backends) * len(config.templates) * len(evaluation)
    max_errors = int(config.error_ceiling * total_cells)

    trace_lock = threading.Lock()
    errors: list[dict] = []
    new_rows: list[OutcomeRow] = []
    abort = threading.Event()
    trace_fh = trace_path.open("a", encoding="utf-8")

    def log(entry: dict) -> None:
        line = json.dumps(entry, sort_keys=True, ensure_ascii=False)
        with trace_lock:
            trace_fh.write(line + "\n")
            trace_fh.flush()

    def work(backend_name: str, template: TemplateId, index: int) -> None:
        if abort.is_set():
            return
        prompt = compose(template, knowledge if template.uses_knowledge else None, tokens[index], index)
        base = {"backend": backend_name, "template": template.value, "record_index": index, "true_label": labels[index].value}
        try:
            trace = run_role_reasoning(wrapped[backend_name], prompt, config.reasoning_mode)
        except BackendError as exc:
            entry = {**base, "error": str(exc), "status": exc.status, "stage": getattr(exc, "stage", None)}
            log(entry)
            with trace_lock:
                errors.append(entry)
                if len(errors) > max_errors:
                    abort.set()
            return
        outcome = extract_outcome(trace.r2_text, config.eps_sum)
        log({**base, "r1_text": trace.r1_text, "r2_text": trace.r2_text, **_outcome_fields(outcome)})
        with trace_lock:
            new_rows.append(OutcomeRow(backend_name, template, index, labels[index], outcome))

    try:
        with ThreadPoolExecutor(max_workers=config.concurrency_limit) as pool:
            futures = [pool.submit(work, *task) for task in tasks]
            for fut in futures:
                fut.result()
    finally:
        trace_fh.close()

    if abort.is_set():
        raise RunAborted(
            f"{len(errors)} of {total_cells} backend requests failed "
            f"(ceiling {config.error_ceiling:.0%}); first error: {errors[0]['error']}"
        )

    rows = sorted([*done.values(), *new_rows], key=lambda r: r.sort_key)
    (out / OUTCOMES_FILE).write_text(outcomes_csv(rows), encoding="utf-8")
    _write_sidecar(out / SIDECAR_FILE, raw_clients)
    report = _build_report(rows, config.anomaly_mode == "misclassify")
    return ExperimentResult(
        config=config,
        rows=rows,
        report=report,
        errors=errors,
        backend_calls=sum(w.misses for w in wrapped.values()),
        cache_hits=sum(w.hits for w in wrapped.values()),
        requests=sum(w.hits + w.misses for w in wrapped.values()),
        clients=raw_clients,
        output_dir=out,
    )


def run_ablation(config: RunConfig, clients: Mapping[str, object] | None = None) -> ExperimentResult:
    """Run the full grid and write ``report.md`` / ``report.csv``."""
    result = run_experiment(config, clients)
    emit_reports(result.report, result.output_dir)
    return result


def report_from_trace(trace_path, out_dir=None, eps_sum: float = 0.01, count_anomalies: bool = False) -> AblationReport:
    rows = load_trace(trace_path, eps_sum)
    report = _build_report(rows, count_anomalies)
    if out_dir is not None:
        emit_reports(report, out_dir)
    return report
