"""Prompt blocks, flow-to-text serialisation and template composition.

Every block text carries a sentinel (``[[KP]]``, ``[[BP]]``, ``[[CoD]]``,
``[[CoT]]``) so tests can check which blocks a composed prompt contains
without depending on the wording. The flow itself is carried on a single
``Data: `` line.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "BLOCK_ORDER",
    "DATA_PREFIX",
    "EXPERT_PREAMBLE",
    "OUTPUT_GRAMMAR",
    "PROMPT_VERSION",
    "ChatMessage",
    "ComposedPrompt",
    "PromptBlockKind",
    "TemplateId",
    "canonical_block_text",
    "compose",
    "format_number",
    "parse_token_text",
    "render_token_text",
    "sentinel",
]

PROMPT_VERSION = "1"
DATA_PREFIX = "Data: "
OUTPUT_GRAMMAR = "Attack: <probability>, Benign: <probability>"


class PromptBlockKind(str, Enum):
    KP = "KP"
    BP = "BP"
    CoD = "CoD"
    CoT = "CoT"
    TP = "TP"


BLOCK_ORDER = (
    PromptBlockKind.KP,
    PromptBlockKind.BP,
    PromptBlockKind.CoD,
    PromptBlockKind.CoT,
    PromptBlockKind.TP,
)


class TemplateId(str, Enum):
    P0 = "P0"
    P1 = "P1"
    P2 = "P2"
    P3prime = "P3prime"
    P3 = "P3"

    def __str__(self) -> str:
        return self.value

    @property
    def blocks(self) -> tuple[PromptBlockKind, ...]:
        return _TEMPLATE_BLOCKS[self]

    @property
    def uses_knowledge(self) -> bool:
        return PromptBlockKind.KP in self.blocks

    @classmethod
    def parse(cls, text: str) -> "TemplateId":
        key = str(text).strip().replace("′", "'").replace("'", "prime")
        for member in cls:
            if member.value.lower() == key.lower():
                return member
        raise ValueError(f"unknown template {text!r}; expected one of P0, P1, P2, P3prime, P3")


K, B, D, T, X = BLOCK_ORDER
_TEMPLATE_BLOCKS = {
    TemplateId.P0: (B, X),
    TemplateId.P1: (B, D, X),
    TemplateId.P2: (B, D, T, X),
    TemplateId.P3prime: (K, B, D, X),
    TemplateId.P3: (K, B, D, T, X),
}
del K, B, D, T, X


def sentinel(kind: PromptBlockKind) -> str:
    return f"[[{PromptBlockKind(kind).value}]]"


EXPERT_PREAMBLE = (
    "You are a senior network security expert specialising in DDoS detection. "
    "You analyse network traffic flow records produced by a flow meter and decide "
    "whether each flow is benign traffic or part of a DDoS attack."
)

_KP_TEXT = """[[KP]]
Before you see any individual flow, here is the global distribution of every feature over the whole dataset. Treat it as prior knowledge for judging whether a single flow is typical or anomalous.
{knowledge}
Do not analyse these statistics now. Reply only with "Acknowledged." and nothing else."""

_BP_TEXT = """[[BP]]
Task: classify the following network traffic flow as Attack (DDoS) or Benign. Provide a probabilistic judgment based on the data: estimate the probability that this flow is an Attack and the probability that it is Benign."""

_COD_TEXT = f"""[[CoD]]
Output constraint: end your answer with exactly one line in this format and nothing after it:
{OUTPUT_GRAMMAR}
Both probabilities must be decimal numbers between 0 and 1 and must sum to 1."""

_COT_TEXT = """[[CoT]]
Analyse the feature values one by one before giving the final answer. Let's think step by step."""

_BLOCK_TEXTS = {
    PromptBlockKind.KP: _KP_TEXT,
    PromptBlockKind.BP: _BP_TEXT,
    PromptBlockKind.CoD: _COD_TEXT,
    PromptBlockKind.CoT: _COT_TEXT,
}


def canonical_block_text(kind: PromptBlockKind) -> str:
    """Frozen text of one prompt block.

    The KP text contains a ``{knowledge}`` placeholder; the TP block is the
    ``Data: `` line and has no free text of its own.
    """
    kind = PromptBlockKind(kind)
    if kind is PromptBlockKind.TP:
        return DATA_PREFIX + "{token_text}"
    return _BLOCK_TEXTS[kind]


def format_number(value: float) -> str:
    """Shortest round-trip decimal; integers print without a decimal point.

    Scientific notation only appears at magnitudes of 1e15 and above.
    """
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"cannot format non-finite value {value}")
    if value == 0:
        return "0"
    if abs(value) >= 1e15:
        text = repr(value)
        return text[:-2] if text.endswith(".0") else text
    if value.is_integer():
        return str(int(value))
    return np.format_float_positional(value, unique=True, trim="-")


def render_token_text(record, schema) -> str:
    """``Name: value`` pairs in schema order, joined by ``, ``."""
    names = schema.feature_names
    if len(record.values) != len(names):
        raise ValueError(f"record has {len(record.values)} values, schema has {len(names)}")
    return ", ".join(f"{n}: {format_number(v)}" for n, v in zip(names, record.values))


_PAIR_SPLIT = re.compile(r", (?=[^,]*: )")


def parse_token_text(text: str, names=None) -> list[tuple[str, float]]:
    """Inverse of :func:`render_token_text`.

    With ``names`` given the split is exact even if feature names contain
    ``", "``; otherwise a heuristic split on ``", "`` is used.
    """
    if names is not None:
        pairs, rest = [], text
        for i, name in enumerate(names):
            prefix = f"{name}: "
            if not rest.startswith(prefix):
                raise ValueError(f"expected feature {name!r} at {rest[:30]!r}")
            rest = rest[len(prefix):]
            if i < len(names) - 1:
                nxt = f", {names[i + 1]}: "
                cut = rest.find(nxt)
                if cut < 0:
                    raise ValueError(f"missing feature {names[i + 1]!r}")
                pairs.append((name, float(rest[:cut])))
                rest = rest[cut + 2:]
            else:
                pairs.append((name, float(rest)))
        return pairs
    out = []
    for chunk in _PAIR_SPLIT.split(text):
        name, _, value = chunk.rpartition(": ")
        out.append((name, float(value)))
    return out


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"invalid role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def as_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ComposedPrompt:
    template: TemplateId
    stage2_messages: tuple[ChatMessage, ...]
    stage1_messages: tuple[ChatMessage, ...] | None = None
    record_index: int = 0

    def all_text(self) -> str:
        msgs = (self.stage1_messages or ()) + self.stage2_messages
        return "\n".join(m.content for m in msgs)

    def render(self) -> str:
        """Human-readable dump of both stages, message contents verbatim."""
        out = [f"# template {self.template.value} record {self.record_index}"]
        if self.stage1_messages:
            out.append("## stage 1")
            for m in self.stage1_messages:
                out += [f"--- {m.role}", m.content]
        out.append("## stage 2")
        for m in self.stage2_messages:
            out += [f"--- {m.role}", m.content]
        return "\n".join(out) + "\n"


def compose(
    template: TemplateId,
    knowledge_text: str | None,
    token_text: str,
    record_index: int = 0,
) -> ComposedPrompt:
    template = TemplateId.parse(template) if isinstance(template, str) else template
    if template.uses_knowledge and knowledge_text is None:
        raise ValueError(f"template {template.value} needs knowledge text")
    if not template.uses_knowledge and knowledge_text is not None:
        raise ValueError(f"template {template.value} takes no knowledge text")

    stage1 = None
    if template.uses_knowledge:
        body = _KP_TEXT.replace("{knowledge}", knowledge_text)
        stage1 = (ChatMessage("system", EXPERT_PREAMBLE), ChatMessage("user", body))

    parts = [_BLOCK_TEXTS[b] for b in template.blocks if b not in (PromptBlockKind.KP, PromptBlockKind.TP)]
    parts.append(DATA_PREFIX + token_text)
    stage2 = (ChatMessage("user", "\n\n".join(parts)),)
    return ComposedPrompt(template, stage2, stage1, record_index)
