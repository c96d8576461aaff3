"""Prompt rendering, spacing-noise injection, and the answer-range fix.

All transforms here are pure string functions. The two noise injections
only ever touch whitespace, so stripping whitespace from a perturbed prompt
recovers the stripped clean prompt; the answer-range fix is the one
transform that adds visible text (a single instruction line).
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field

from .errors import (
    AmbiguousKeyword,
    InvalidConfig,
    KeywordNotFound,
    NoOptionsBlock,
)

DEFAULT_CONTROL_KEYWORD = "Answer:"
DEFAULT_PE_TEMPLATE = "Respond with exactly one of: {letters}."

_OPTION_LINE = re.compile(r"^([A-Z])([.)])([ \t]+)(\S.*)$")


@dataclass(frozen=True)
class PromptTemplate:
    """Clean prompt layout: preamble, question line, option lines, keyword line."""

    preamble: str = "Answer the following multiple-choice question."
    question_format: str = "Question: {question}"
    option_format: str = "{letter}. {text}"
    control_keyword: str = DEFAULT_CONTROL_KEYWORD

    def __post_init__(self):
        if not self.control_keyword:
            raise InvalidConfig("control keyword must be nonempty")

    def render(self, question: str, options: dict[str, str]) -> str:
        parts = []
        if self.preamble:
            parts.append(self.preamble)
            parts.append("")
        parts.append(self.question_format.format(question=question))
        for letter, text in options.items():
            parts.append(self.option_format.format(letter=letter, text=text))
        parts.append(self.control_keyword)
        prompt = "\n".join(parts)
        if prompt.count(self.control_keyword) != 1:
            raise AmbiguousKeyword(
                f"control keyword {self.control_keyword!r} must appear exactly once"
            )
        return prompt


@dataclass(frozen=True)
class NoiseSpec:
    """Which spacing perturbations to apply. All-false renders byte-identically."""

    trailing_space_after_keyword: bool = False
    option_spacing_irregularity: bool = False
    seed: int = 0


@dataclass(frozen=True)
class PeFixSpec:
    """Instruction line enumerating the permissible answer letters."""

    enabled: bool = False
    option_letters: tuple[str, ...] = ()
    instruction_template: str = DEFAULT_PE_TEMPLATE


def inject_trailing_space(prompt: str, keyword: str = DEFAULT_CONTROL_KEYWORD) -> str:
    """Append one space immediately after the single keyword occurrence.

    Deliberately not idempotent: applying it twice yields two spaces.
    """
    if not keyword:
        raise InvalidConfig("keyword must be nonempty")
    hits = prompt.count(keyword)
    if hits == 0:
        raise KeywordNotFound(f"keyword {keyword!r} not found in prompt")
    if hits > 1:
        raise AmbiguousKeyword(f"keyword {keyword!r} occurs {hits} times")
    end = prompt.index(keyword) + len(keyword)
    return prompt[:end] + " " + prompt[end:]


def inject_option_spacing(prompt: str, spec: NoiseSpec) -> str:
    """Perturb whitespace inside the options block, deterministically per seed.

    Doubles the whitespace run after every option separator and inserts a
    seed-chosen blank line between adjacent option lines. Non-whitespace
    bytes are never touched.
    """
    if not spec.option_spacing_irregularity:
        return prompt
    lines = prompt.split("\n")
    option_indices = [i for i, line in enumerate(lines) if _OPTION_LINE.match(line)]
    if not option_indices:
        raise NoOptionsBlock("no option lines detected in prompt")

    rng = random.Random(spec.seed)
    out: list[str] = []
    for i, line in enumerate(lines):
        match = _OPTION_LINE.match(line)
        if match:
            letter, sep, space, text = match.groups()
            line = f"{letter}{sep}{space * 2}{text}"
            # Blank line before this option when it directly follows another.
            if out and i - 1 in option_indices and rng.random() < 0.5:
                out.append("")
        out.append(line)
    return "\n".join(out)


def apply_pe_fix(
    prompt: str,
    fix: PeFixSpec,
    keyword: str = DEFAULT_CONTROL_KEYWORD,
) -> str:
    """Insert the answer-range instruction line just before the keyword line."""
    if not fix.enabled:
        return prompt
    if not fix.option_letters:
        raise InvalidConfig("answer-range fix enabled with no option letters")
    hits = prompt.count(keyword)
    if hits == 0:
        raise KeywordNotFound(f"keyword {keyword!r} not found in prompt")
    if hits > 1:
        raise AmbiguousKeyword(f"keyword {keyword!r} occurs {hits} times")
    instruction = fix.instruction_template.format(letters=", ".join(fix.option_letters))
    line_start = prompt.rfind("\n", 0, prompt.index(keyword)) + 1
    return prompt[:line_start] + instruction + "\n" + prompt[line_start:]
