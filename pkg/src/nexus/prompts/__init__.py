"""Prompt templates with validated placeholder substitution.

Each template lives in ``templates/<id>.txt`` as a UTF-8 fixture: front
matter naming its placeholders, then a ``=== system ===`` section and a
``=== user ===`` section.  Those files are the canonical bytes - tests pin
their hashes - so this module never normalizes or reflows them.

Template grammar: ``{name}`` is a placeholder (lowercase identifier,
immediately closed), ``{{`` and ``}}`` are escapes for literal braces, and
any other brace is literal text (the judge schema block relies on this).
Substitution is literal: binding content is inserted verbatim, optional
sections absent from the bindings render as the empty string.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping

from ..errors import MissingBinding, TemplateError, UnknownPlaceholder, UnknownTemplate

TEMPLATE_IDS = (
    "context_agent",
    "macro_agent",
    "micro_agent",
    "calibration_agent",
    "value_predictor",
    "cot_baseline",
    "judge",
)

_TEMPLATE_DIR = Path(__file__).resolve().parent / "templates"
_TOKEN = re.compile(r"\{\{|\}\}|\{([a-z][a-z0-9_]*)\}")

# segment kinds: ("lit", raw-text) | ("esc", "{" or "}") | ("ph", name)
Segment = tuple[str, str]


def parse_segments(text: str) -> list[Segment]:
    """Tokenize template text left-to-right; ``unparse`` inverts this exactly."""
    segments: list[Segment] = []
    pos = 0
    for m in _TOKEN.finditer(text):
        if m.start() > pos:
            segments.append(("lit", text[pos : m.start()]))
        token = m.group(0)
        if token == "{{":
            segments.append(("esc", "{"))
        elif token == "}}":
            segments.append(("esc", "}"))
        else:
            segments.append(("ph", m.group(1)))
        pos = m.end()
    if pos < len(text):
        segments.append(("lit", text[pos:]))
    return segments


def unparse(segments: list[Segment]) -> str:
    parts = []
    for kind, value in segments:
        if kind == "lit":
            parts.append(value)
        elif kind == "esc":
            parts.append(value * 2)
        else:
            parts.append("{" + value + "}")
    return "".join(parts)


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    system_text: str
    user_text: str
    placeholders: tuple[str, ...]
    optional: frozenset[str]


@dataclass(frozen=True)
class PromptPair:
    system: str
    user: str


def _found_placeholders(*texts: str) -> list[str]:
    seen: list[str] = []
    for text in texts:
        for kind, value in parse_segments(text):
            if kind == "ph" and value not in seen:
                seen.append(value)
    return seen


@lru_cache(maxsize=None)
def load_template(template_id: str) -> PromptTemplate:
    if template_id not in TEMPLATE_IDS:
        raise UnknownTemplate(f"unknown template {template_id!r}")
    path = _TEMPLATE_DIR / f"{template_id}.txt"
    raw = path.read_text(encoding="utf-8")

    lines = raw.split("\n")
    if lines[0] != "---":
        raise TemplateError(f"{path}: missing front matter")
    try:
        close = lines.index("---", 1)
    except ValueError as exc:
        raise TemplateError(f"{path}: unterminated front matter") from exc
    meta: dict[str, str] = {}
    for line in lines[1:close]:
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    body = "\n".join(lines[close + 1 :])

    sys_marker, usr_marker = "=== system ===\n", "\n=== user ===\n"
    if not body.startswith(sys_marker) or usr_marker not in body:
        raise TemplateError(f"{path}: missing section markers")
    system_text, _, rest = body[len(sys_marker) :].partition(usr_marker)
    user_text = rest[:-1] if rest.endswith("\n") else rest

    declared = tuple(p.strip() for p in meta.get("placeholders", "").split(",") if p.strip())
    optional = frozenset(p.strip() for p in meta.get("optional", "").split(",") if p.strip())
    found = _found_placeholders(system_text, user_text)
    if set(found) != set(declared):
        raise TemplateError(
            f"{path}: declared placeholders {sorted(declared)} != found {sorted(found)}"
        )
    if not optional <= set(declared):
        raise TemplateError(f"{path}: optional names not among placeholders")
    return PromptTemplate(
        template_id=template_id,
        system_text=system_text,
        user_text=user_text,
        placeholders=declared,
        optional=optional,
    )


def required_placeholders(template_id: str) -> set[str]:
    tpl = load_template(template_id)
    return set(tpl.placeholders) - set(tpl.optional)


def _substitute(text: str, tpl: PromptTemplate, bindings: Mapping[str, str]) -> str:
    parts = []
    for kind, value in parse_segments(text):
        if kind == "lit":
            parts.append(value)
        elif kind == "esc":
            parts.append(value)
        else:
            if value in bindings:
                parts.append(bindings[value])
            elif value in tpl.optional:
                parts.append("")
            else:
                raise MissingBinding(f"{tpl.template_id}: no binding for {{{value}}}")
    return "".join(parts)


def render(template_id: str, bindings: Mapping[str, str]) -> PromptPair:
    """Fill a template, enforcing that bindings match its placeholder set."""
    tpl = load_template(template_id)
    unknown = set(bindings) - set(tpl.placeholders)
    if unknown:
        raise UnknownPlaceholder(
            f"{template_id}: bindings {sorted(unknown)} are not placeholders"
        )
    return PromptPair(
        system=_substitute(tpl.system_text, tpl, bindings),
        user=_substitute(tpl.user_text, tpl, bindings),
    )
