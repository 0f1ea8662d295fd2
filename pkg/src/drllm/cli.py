"""Command line entry point (``drllm``)."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .backend import BackendError
from .config import ANOMALY_MODES, ConfigError, load_config
from .evaluation import emit_reports
from .flow_data import DatasetError, load_dataset, preprocess, sample, select_features, summary_report, write_dataset
from .knowledge import compute_profile, profile_csv, render_knowledge_text
from .orchestrator import RunAborted, prepare_data, report_from_trace, run_ablation
from .prompts import TemplateId, compose, render_token_text

logger = logging.getLogger("drllm")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NOT_APPLICABLE = 0, 1, 2, 3


def _csv_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _add_data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="flow CSV; omit for synthetic flows")
    p.add_argument("--label-column", default=None)
    p.add_argument("--features", type=_csv_list, help="comma-separated feature names to keep")
    p.add_argument("--records", help="sample size (or 'all')")
    p.add_argument("--seed", type=int)
    p.add_argument("--stratified", action="store_const", const=True, default=None)


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    _add_data_options(p)
    p.add_argument("--template", action="append", type=_csv_list, help="template id(s); repeatable")
    p.add_argument("--backend", action="append", help="mock, mock:<name> or http:<name>; repeatable")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--cache", help="response cache file")
    p.add_argument("--output", help="output directory")
    p.add_argument("--anomaly-mode", choices=ANOMALY_MODES)
    p.add_argument("--eps-sum", type=float)
    p.add_argument("--error-ceiling", type=float)
    p.add_argument("--reasoning-mode", choices=("assistant", "concat"))
    p.add_argument("--profile-scope", choices=("sample", "full"))
    mock = p.add_argument_group("mock backend")
    mock.add_argument("--accuracy")
    mock.add_argument("--l1-rate")
    mock.add_argument("--l2-rate")
    mock.add_argument("--mock-seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drllm", description="Zero-shot DDoS flow classification with chat LLMs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="drop NaN/Inf rows, binarise labels")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--label-column", default="Label")
    p.add_argument("--features", type=_csv_list)

    p = sub.add_parser("profile", help="global per-feature statistics")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output prefix; writes <prefix>.txt and <prefix>.csv")
    p.add_argument("--label-column", default="Label")
    p.add_argument("--features", type=_csv_list)
    p.add_argument("--records", type=int, help="profile a sample of this size")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--stratified", action="store_true")

    p = sub.add_parser("render", help="print the composed prompt for one record")
    _add_data_options(p)
    p.add_argument("--config")
    p.add_argument("--template", default="P3")
    p.add_argument("--record", type=int, default=0, help="position within the evaluation set")

    p = sub.add_parser("run", help="run one or more templates (default P3)")
    _add_run_options(p)
    p = sub.add_parser("ablate", help="run the full template grid")
    _add_run_options(p)

    p = sub.add_parser("report", help="rebuild report tables from a trace log")
    p.add_argument("--from-trace", required=True)
    p.add_argument("--output", help="directory for report.md / report.csv (default: next to the trace)")
    p.add_argument("--eps-sum", type=float, default=0.01)
    p.add_argument("--anomaly-mode", choices=ANOMALY_MODES, default="exclude")
    return parser


def _config_from_args(args, default_templates):
    templates = None
    if isinstance(args.template, str):
        templates = args.template
    elif args.template:
        templates = ",".join(t for group in args.template for t in group)
    elif default_templates and not args.config:
        templates = default_templates
    overrides = {
        "dataset": args.dataset,
        "label_column": args.label_column,
        "features": ",".join(args.features) if args.features else None,
        "records": args.records,
        "seed": args.seed,
        "stratified": args.stratified,
        "templates": templates,
        "concurrency": getattr(args, "concurrency", None),
        "cache": getattr(args, "cache", None),
        "output": getattr(args, "output", None),
        "anomaly_mode": getattr(args, "anomaly_mode", None),
        "eps_sum": getattr(args, "eps_sum", None),
        "error_ceiling": getattr(args, "error_ceiling", None),
        "reasoning_mode": getattr(args, "reasoning_mode", None),
        "profile_scope": getattr(args, "profile_scope", None),
    }
    mock = {
        "accuracy": getattr(args, "accuracy", None),
        "l1_rate": getattr(args, "l1_rate", None),
        "l2_rate": getattr(args, "l2_rate", None),
        "seed": getattr(args, "mock_seed", None),
    }
    return load_config(args.config, overrides=overrides, backend_specs=getattr(args, "backend", None), mock_overrides=mock)


def _cmd_preprocess(args) -> int:
    ds = preprocess(load_dataset(args.input, args.label_column))
    if args.features:
        ds = select_features(ds, args.features)
    write_dataset(ds, args.output)
    summary = Path(str(args.output) + ".summary.txt")
    summary.write_text(summary_report(ds), encoding="utf-8")
    print(summary_report(ds), end="")
    return EXIT_OK


def _cmd_profile(args) -> int:
    ds = preprocess(load_dataset(args.input, args.label_column))
    if args.features:
        ds = select_features(ds, args.features)
    if args.records and args.records < len(ds):
        ds = sample(ds, args.records, args.seed, args.stratified)
    profile = compute_profile(ds)
    text = render_knowledge_text(profile, ds.schema)
    Path(args.output + ".txt").write_text(text + "\n" if text else "", encoding="utf-8")
    Path(args.output + ".csv").write_text(profile_csv(profile, ds.schema), encoding="utf-8")
    print(text)
    return EXIT_OK


def _cmd_render(args) -> int:
    config = _config_from_args(args, None)
    template = TemplateId.parse(args.template)
    evaluation, profiled = prepare_data(config)
    if not 0 <= args.record < len(evaluation):
        raise DatasetError(f"record {args.record} out of range (0..{len(evaluation) - 1})")
    record = evaluation.records[args.record]
    knowledge = None
    if template.uses_knowledge:
        knowledge = render_knowledge_text(compute_profile(profiled), profiled.schema)
    prompt = compose(template, knowledge, render_token_text(record, evaluation.schema), record.index)
    sys.stdout.write(prompt.render())
    return EXIT_OK


def _cmd_run(args, default_templates) -> int:
    config = _config_from_args(args, default_templates)
    result = run_ablation(config)
    print(
        f"{len(result.rows)} outcomes, {result.backend_calls} backend calls, "
        f"{result.cache_hits} cache hits -> {result.output_dir}"
    )
    print((result.output_dir / "report.md").read_text(encoding="utf-8"), end="")
    return _check_applicable(result.report)


def _check_applicable(report) -> int:
    bad = report.not_applicable
    if bad:
        cells = ", ".join(f"{c.backend}/{c.template.value}" for c in bad)
        print(f"AUC not applicable (single-class data) in: {cells}", file=sys.stderr)
        return EXIT_NOT_APPLICABLE
    return EXIT_OK


def _cmd_report(args) -> int:
    trace = Path(args.from_trace)
    out = Path(args.output) if args.output else trace.parent
    report = report_from_trace(trace, None, args.eps_sum, args.anomaly_mode == "misclassify")
    files = emit_reports(report, out)
    print(files["report.md"], end="")
    return _check_applicable(report)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "preprocess":
            return _cmd_preprocess(args)
        if args.command == "profile":
            return _cmd_profile(args)
        if args.command == "render":
            return _cmd_render(args)
        if args.command == "run":
            return _cmd_run(args, "P3")
        if args.command == "ablate":
            return _cmd_run(args, None)
        if args.command == "report":
            return _cmd_report(args)
    except (ConfigError, DatasetError, BackendError, RunAborted, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    parser.error(f"unknown command {args.command}")
    return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
