"""Two-step role reasoning and parsing of model answers into outcomes."""
from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Context, Decimal, InvalidOperation, localcontext
from typing import Sequence, Union

from .backend import BackendError
from .flow_data import Label
from .prompts import ChatMessage, ComposedPrompt, TemplateId

__all__ = [
    "DEFAULT_EPS_SUM",
    "REFUSAL_LEXICON",
    "AnomalyL1",
    "AnomalyL2",
    "InferenceOutcome",
    "ParseFailure",
    "ParsedClassification",
    "ReasoningTrace",
    "StageError",
    "Valid",
    "decide",
    "extract_outcome",
    "format_pair",
    "run_role_reasoning",
]

DEFAULT_EPS_SUM = 0.01
REFUSAL_LEXICON = (
    "cannot",
    "unable to",
    "impossible to determine",
    "insufficient information",
    "lack of confidence",
)


class StageError(BackendError):
    """Backend failure during stage 1 or stage 2 of the pipeline."""

    def __init__(self, stage: int, cause: BaseException):
        super().__init__(f"stage{stage}: {cause}", getattr(cause, "status", None))
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ReasoningTrace:
    record_index: int
    template: TemplateId
    r2_text: str
    r1_text: str | None = None
    latencies: tuple[float, ...] = ()


@dataclass(frozen=True)
class ParsedClassification:
    p_attack: float
    p_benign: float
    predicted: Label
    raw: str


@dataclass(frozen=True)
class Valid:
    parsed: ParsedClassification
    variant = "valid"

    @property
    def p_attack(self) -> float:
        return self.parsed.p_attack

    @property
    def p_benign(self) -> float:
        return self.parsed.p_benign


@dataclass(frozen=True)
class AnomalyL1:
    p_attack: float
    p_benign: float
    sum_deviation: float
    raw: str = ""
    variant = "l1"


@dataclass(frozen=True)
class AnomalyL2:
    raw: str
    variant = "l2"


@dataclass(frozen=True)
class ParseFailure:
    raw: str
    variant = "parse_failure"


InferenceOutcome = Union[Valid, AnomalyL1, AnomalyL2, ParseFailure]


def decide(parsed) -> Label:
    """Attack iff p_attack >= 0.5."""
    p = parsed.p_attack if hasattr(parsed, "p_attack") else float(parsed)
    return Label.ATTACK if p >= 0.5 else Label.BENIGN


_NUM = r"(\d{1,20}(?:\.\d{1,1100})?|\.\d{1,1100})"
_PAIR = re.compile(
    rf"\battack\b\**\s*[:=]\s*{_NUM}\s*(%?)\s*[,;]?\s*\**\bbenign\b\**\s*[:=]\s*{_NUM}\s*(%?)",
    re.IGNORECASE,
)
# wide enough that sums of the literals the grammar admits are exact
# (a float in [0, 1] printed positionally has at most 1074 fraction digits)
_EXACT = Context(prec=1200)
_REFUSAL = re.compile("|".join(re.escape(p) for p in REFUSAL_LEXICON), re.IGNORECASE)


def _pair_values(match: re.Match) -> tuple[Decimal, Decimal] | None:
    x_txt, x_pct, y_txt, y_pct = match.groups()
    if bool(x_pct) != bool(y_pct):
        return None
    try:
        x, y = Decimal(x_txt), Decimal(y_txt)
    except InvalidOperation:
        return None
    if x_pct:
        with localcontext(_EXACT):
            x, y = x / 100, y / 100
    if not (0 <= x <= 1 and 0 <= y <= 1):
        return None
    return x, y


def extract_outcome(raw: str, eps_sum: float = DEFAULT_EPS_SUM) -> InferenceOutcome:
    """Classify a completion as Valid, L1, L2 or ParseFailure.

    The last ``Attack: x, Benign: y`` pair in the text wins. The sum check is
    done in exact decimal arithmetic on the printed literals, so a pair at
    exactly ``eps_sum`` from 1 is still valid.
    """
    if not isinstance(raw, str):
        raw = str(raw)
    pair = None
    for match in _PAIR.finditer(raw):
        values = _pair_values(match)
        if values is not None:
            pair = values
    if pair is None:
        if raw and _REFUSAL.search(raw):
            return AnomalyL2(raw)
        return ParseFailure(raw)

    x, y = pair
    with localcontext(_EXACT):
        deviation = abs(x + y - 1)
    if deviation > Decimal(eps_sum):
        return AnomalyL1(float(x), float(y), float(deviation), raw)

    xf, yf = float(x), float(y)
    if xf + yf != 1.0:
        xf = xf / (xf + yf)
        yf = 1.0 - xf
    parsed = ParsedClassification(xf, yf, Label.ATTACK if xf >= 0.5 else Label.BENIGN, raw)
    return Valid(parsed)


def format_pair(p_attack: float, p_benign: float | None = None) -> str:
    """Canonical answer line for a probability pair."""
    from .prompts import format_number

    if p_benign is None:
        p_benign = 1.0 - p_attack
    return f"Attack: {format_number(p_attack)}, Benign: {format_number(p_benign)}"


def run_role_reasoning(backend, prompt: ComposedPrompt, mode: str = "assistant") -> ReasoningTrace:
    """Send stage 1 (if any), then stage 2 as a continuation of it.

    ``mode="assistant"`` replays the stage-1 answer as an assistant turn;
    ``mode="concat"`` prepends it to the stage-2 user message instead.
    """
    if mode not in ("assistant", "concat"):
        raise ValueError(f"unknown reasoning mode {mode!r}")
    latencies = []
    r1 = None
    stage2: Sequence[ChatMessage] = prompt.stage2_messages
    if prompt.stage1_messages:
        try:
            resp1 = backend.complete(list(prompt.stage1_messages))
        except BackendError as exc:
            raise StageError(1, exc) from exc
        r1 = resp1.text
        latencies.append(resp1.latency)
        history = list(prompt.stage1_messages)
        if mode == "assistant":
            reply = r1 if r1 else "(no response)"
            stage2 = history + [ChatMessage("assistant", reply), *prompt.stage2_messages]
        else:
            first, *rest = prompt.stage2_messages
            merged = ChatMessage(first.role, f"{r1}\n\n{first.content}" if r1 else first.content)
            stage2 = history + [merged, *rest]
    try:
        resp2 = backend.complete(list(stage2))
    except BackendError as exc:
        raise StageError(2, exc) from exc
    latencies.append(resp2.latency)
    return ReasoningTrace(prompt.record_index, prompt.template, resp2.text, r1, tuple(latencies))
