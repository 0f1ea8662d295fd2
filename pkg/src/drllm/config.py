"""Run configuration: INI-style file, ``DRLLM_*`` environment overrides, flags.

Example file::

    [run]
    dataset = data/DrDoS_DNS.csv
    features = Flow Duration, Total Fwd Packets, Flow Bytes/s
    records = 1000
    seed = 7
    stratified = true
    templates = P0, P1, P2, P3prime, P3
    concurrency = 8
    output = out/

    [backend deepseek]
    kind = http
    url = https://api.deepseek.com/chat/completions
    model = deepseek-chat
    api_key_env = DRLLM_API_KEY_DEEPSEEK

    [backend mock]
    kind = mock
    accuracy = 0.85
    l1_rate = 0.05
    l2_rate = 0.02
    seed = 7

Precedence is file < environment < command-line flags. Every ``[run]`` key
can be overridden by ``DRLLM_<KEY>`` (e.g. ``DRLLM_RECORDS=200``);
``DRLLM_CACHE`` sets the cache path.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from .backend import BackendConfig, MockParams
from .prompts import TemplateId

__all__ = [
    "ANOMALY_MODES",
    "HTTP_PRESETS",
    "RUN_KEYS",
    "ConfigError",
    "RunConfig",
    "api_key_env",
    "backend_from_section",
    "load_config",
    "parse_backend_spec",
]

ANOMALY_MODES = ("exclude", "misclassify")
ALL_TEMPLATES = tuple(TemplateId)


class ConfigError(ValueError):
    pass


# OpenAI-compatible gateways for the four backbones evaluated with this method.
HTTP_PRESETS: dict[str, dict[str, str]] = {
    "deepseek": {"url": "https://api.deepseek.com/chat/completions", "model": "deepseek-chat"},
    "openai": {"url": "https://api.openai.com/v1/chat/completions", "model": "gpt-4o-mini"},
    "qwen": {
        "url": "https://dashscope.aliyuncs.com/compatible-mode/v1/chat/completions",
        "model": "qwen2-57b-a14b-instruct",
    },
    "llama": {"url": "https://api.groq.com/openai/v1/chat/completions", "model": "llama3-70b-8192"},
}


def api_key_env(name: str) -> str:
    safe = "".join(c if c.isalnum() else "_" for c in name.upper())
    return f"DRLLM_API_KEY_{safe}"


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    label_column: str = "Label"
    features: tuple[str, ...] | None = None
    records: int | None = 1000
    seed: int = 7
    stratified: bool = False
    templates: tuple[TemplateId, ...] = ALL_TEMPLATES
    backends: tuple[BackendConfig, ...] = field(default_factory=lambda: (BackendConfig(),))
    concurrency_limit: int = 4
    cache_path: str | None = None
    output_dir: str = "drllm-out"
    anomaly_mode: str = "exclude"
    eps_sum: float = 0.01
    error_ceiling: float = 0.2
    reasoning_mode: str = "assistant"
    profile_scope: str = "sample"

    def __post_init__(self):
        if self.concurrency_limit < 1:
            raise ConfigError("concurrency_limit must be >= 1")
        if not self.templates:
            raise ConfigError("at least one template is required")
        if not self.backends:
            raise ConfigError("at least one backend is required")
        names = [b.name for b in self.backends]
        if len(set(names)) != len(names):
            raise ConfigError(f"backend names must be unique: {names}")
        if self.anomaly_mode not in ANOMALY_MODES:
            raise ConfigError(f"anomaly_mode must be one of {ANOMALY_MODES}")
        if self.reasoning_mode not in ("assistant", "concat"):
            raise ConfigError("reasoning_mode must be assistant or concat")
        if self.profile_scope not in ("sample", "full"):
            raise ConfigError("profile_scope must be sample or full")
        if not 0 <= self.error_ceiling <= 1:
            raise ConfigError("error_ceiling must lie in [0, 1]")
        if self.records is not None and self.records <= 0:
            raise ConfigError("records must be positive")
        if self.eps_sum < 0:
            raise ConfigError("eps_sum must be >= 0")

    @property
    def resolved_cache_path(self) -> Path | None:
        """Cache file, or None when caching is switched off (``cache = none``)."""
        if self.cache_path and self.cache_path.strip().lower() == "none":
            return None
        return Path(self.cache_path) if self.cache_path else Path(self.output_dir) / "responses.cache"

    def snapshot(self) -> dict:
        """JSON-friendly view, used for the run manifest."""
        data = asdict(self)
        data["templates"] = [t.value for t in self.templates]
        data["backends"] = [
            {k: v for k, v in asdict(b).items() if v is not None} for b in self.backends
        ]
        return data


def _bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in str(text).split(",") if p.strip())


def _optional_int(text):
    return None if str(text).strip().lower() in ("", "all", "none") else int(text)


# [run] key -> (RunConfig field, converter)
RUN_KEYS = {
    "dataset": ("dataset", str),
    "label_column": ("label_column", str),
    "features": ("features", _list),
    "records": ("records", _optional_int),
    "seed": ("seed", int),
    "stratified": ("stratified", _bool),
    "templates": ("templates", lambda s: tuple(TemplateId.parse(t) for t in _list(s))),
    "concurrency": ("concurrency_limit", int),
    "cache": ("cache_path", str),
    "output": ("output_dir", str),
    "anomaly_mode": ("anomaly_mode", str),
    "eps_sum": ("eps_sum", float),
    "error_ceiling": ("error_ceiling", float),
    "reasoning_mode": ("reasoning_mode", str),
    "profile_scope": ("profile_scope", str),
}


def backend_from_section(name: str, section: Mapping[str, str]) -> BackendConfig:
    kind = section.get("kind", "mock" if name.startswith("mock") else "http")
    common = {}
    if "temperature" in section:
        common["temperature"] = float(section["temperature"])
    if "max_tokens" in section:
        common["max_output_tokens"] = int(section["max_tokens"])
    if kind == "mock":
        params = MockParams(
            accuracy=float(section.get("accuracy", 0.85)),
            l1_rate=float(section.get("l1_rate", 0.05)),
            l2_rate=float(section.get("l2_rate", 0.02)),
            seed=int(section.get("seed", 7)),
        )
        return BackendConfig(kind="mock", name=name, model_name=section.get("model"), mock_params=params, **common)
    preset = HTTP_PRESETS.get(name, {})
    try:
        return BackendConfig(
            kind="http",
            name=name,
            endpoint_url=section.get("url", preset.get("url")),
            model_name=section.get("model", preset.get("model")),
            auth_source=section.get("api_key_env", api_key_env(name)),
            timeout=float(section.get("timeout", 60)),
            max_retries=int(section.get("max_retries", 3)),
            backoff_base=float(section.get("backoff", 1.0)),
            requests_per_second=float(section.get("rate", 5.0)),
            **common,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_backend_spec(spec: str, sections: Mapping[str, Mapping[str, str]] | None = None, mock_overrides: Mapping[str, str] | None = None) -> BackendConfig:
    """Resolve a ``mock``, ``mock:<name>`` or ``http:<name>`` backend spec.

    ``<name>`` is looked up among ``[backend <name>]`` config sections, then
    among the built-in HTTP presets.
    """
    sections = sections or {}
    kind, _, name = spec.partition(":")
    kind = kind.strip().lower()
    if kind not in ("mock", "http"):
        # bare name of a configured backend
        if spec in sections:
            return backend_from_section(spec, sections[spec])
        raise ConfigError(f"unknown backend {spec!r}; use mock, mock:<name> or http:<name>")
    name = name.strip() or kind
    section = dict(sections.get(name, {}))
    section["kind"] = kind
    if kind == "mock" and mock_overrides:
        section.update({k: v for k, v in mock_overrides.items() if v is not None})
    if kind == "http" and name not in sections and name not in HTTP_PRESETS:
        raise ConfigError(f"no [backend {name}] section and no built-in preset named {name!r}")
    return backend_from_section(name, section)


def _read_sections(path) -> tuple[dict[str, str], dict[str, dict[str, str]]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str.lower
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    run = dict(parser["run"]) if parser.has_section("run") else {}
    backends = {}
    for sect in parser.sections():
        head = sect.strip()
        for prefix in ("backend:", "backend "):
            if head.lower().startswith(prefix):
                backends[head[len(prefix):].strip()] = dict(parser[sect])
    return run, backends


def load_config(
    path=None,
    environ: Mapping[str, str] | None = None,
    overrides: Mapping[str, object] | None = None,
    backend_specs: list[str] | None = None,
    mock_overrides: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge file, environment and flag values into a RunConfig.

    ``overrides`` uses ``[run]`` key names (``records``, ``concurrency``...)
    with already-typed or string values; ``None`` values are ignored.
    """
    environ = os.environ if environ is None else environ
    run, sections = _read_sections(path) if path else ({}, {})

    values: dict[str, object] = {}
    for key, raw in run.items():
        if key not in RUN_KEYS:
            raise ConfigError(f"unknown [run] key {key!r}")
        attr, conv = RUN_KEYS[key]
        values[attr] = conv(raw)
    for key, (attr, conv) in RUN_KEYS.items():
        env_key = f"DRLLM_{key.upper()}"
        if environ.get(env_key):
            values[attr] = conv(environ[env_key])
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in RUN_KEYS:
            raise ConfigError(f"unknown setting {key!r}")
        attr, conv = RUN_KEYS[key]
        values[attr] = conv(raw) if isinstance(raw, str) else raw

    if backend_specs:
        backends = tuple(parse_backend_spec(s, sections, mock_overrides) for s in backend_specs)
    elif sections:
        backends = tuple(backend_from_section(n, s) for n, s in sections.items())
    else:
        backends = (parse_backend_spec("mock", {}, mock_overrides),)
    values["backends"] = backends

    valid = {f.name for f in fields(RunConfig)}
    return RunConfig(**{k: v for k, v in values.items() if k in valid})


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    return replace(config, **changes)
