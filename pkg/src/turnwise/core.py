"""Core data types and the multi-turn text format.

A reasoning trace is a think segment followed by an answer.  The think
segment decomposes into ordered thinking units; the multi-turn format
interleaves one unit with one intermediate answer per turn:

    <think>u_1</think>a_1<think>u_2</think>a_2 ... <think>u_n</think>a_n

Rendering is byte-exact and parsing is its inverse, so the format can be
used both as a training target and as a live transcript.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

# Two decimal strings are considered the same number within this tolerance.
NUMERIC_TOLERANCE = 1e-9


class FormatError(ValueError):
    """Raised when text does not follow the alternating think/answer shape."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


def _reject_tag_literals(text: str, what: str) -> None:
    for tag in (THINK_OPEN, THINK_CLOSE):
        if tag in text:
            raise ValueError(f"{what} must not contain the literal {tag!r}")


@dataclass(frozen=True)
class Query:
    """A problem to reason about, with an optional gold answer."""

    id: str
    problem: str
    gold_answer: str | None = None

    def __post_init__(self):
        if not self.problem:
            raise ValueError("query problem must be non-empty")


@dataclass(frozen=True)
class ThinkingUnit:
    """One self-contained reasoning step, 1-indexed within its trace."""

    index: int
    text: str

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("unit index is 1-based")
        if not self.text:
            raise ValueError("unit text must be non-empty")
        _reject_tag_literals(self.text, "unit text")


@dataclass(frozen=True)
class ThinkTrace:
    """A raw think segment and (optionally) its unit decomposition.

    When units are present they must cover raw_text exactly, in order.
    """

    raw_text: str
    units: tuple[ThinkingUnit, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        for i, unit in enumerate(self.units):
            if unit.index != i + 1:
                raise ValueError(f"unit indices must run 1..n, got {unit.index} at position {i}")
        if self.units and "".join(u.text for u in self.units) != self.raw_text:
            raise ValueError("units do not reconstruct raw_text")


@dataclass(frozen=True)
class Turn:
    """One reasoning turn: a thinking unit plus its intermediate answer.

    The answer is stored trimmed, which makes render/parse a true inverse
    pair (the parser tolerates and strips whitespace around answers).
    """

    unit: ThinkingUnit
    answer: str

    def __post_init__(self):
        trimmed = self.answer.strip()
        if not trimmed:
            raise ValueError("turn answer must be non-empty after trimming")
        _reject_tag_literals(trimmed, "turn answer")
        object.__setattr__(self, "answer", trimmed)


@dataclass(frozen=True)
class MultiTurnResponse:
    """An ordered sequence of turns; the last answer is the final answer."""

    turns: tuple[Turn, ...]

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise ValueError("response needs at least one turn")
        for i, turn in enumerate(self.turns):
            if turn.unit.index != i + 1:
                raise ValueError(f"turn {i + 1} carries unit index {turn.unit.index}")

    @property
    def final_answer(self) -> str:
        return self.turns[-1].answer


@dataclass(frozen=True)
class TokenStats:
    """Token and latency accounting for a request, turn, or whole session."""

    prompt_tokens: int
    output_tokens: int
    ttft_ms: float
    total_ms: float

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if not 0 <= self.ttft_ms <= self.total_ms:
            raise ValueError("ttft_ms must lie within [0, total_ms]")


def render_multi_turn(response: MultiTurnResponse) -> str:
    """Render a response to the alternating think/answer wire form."""
    return "".join(
        f"{THINK_OPEN}{turn.unit.text}{THINK_CLOSE}{turn.answer}" for turn in response.turns
    )


def parse_multi_turn(text: str) -> MultiTurnResponse:
    """Parse text in the alternating think/answer form.

    Accepts optional whitespace around answers and before the first think
    block; anything else out of shape raises FormatError with the offset
    of the offending position.
    """
    turns: list[Turn] = []
    pos = 0
    n = len(text)
    while pos < n and text[pos].isspace():
        pos += 1
    if not text.startswith(THINK_OPEN, pos):
        if THINK_OPEN in text:
            raise FormatError("text before first think block", pos)
        raise FormatError("expected a think block", pos)
    while pos < n:
        if not text.startswith(THINK_OPEN, pos):
            raise FormatError("expected a think block", pos)
        body_start = pos + len(THINK_OPEN)
        close = text.find(THINK_CLOSE, body_start)
        if close < 0:
            raise FormatError("unclosed think block", pos)
        unit_text = text[body_start:close]
        if not unit_text:
            raise FormatError("empty think block", pos)
        answer_start = close + len(THINK_CLOSE)
        next_open = text.find(THINK_OPEN, answer_start)
        answer_end = next_open if next_open >= 0 else n
        answer = text[answer_start:answer_end].strip()
        if not answer:
            raise FormatError("empty answer after think block", answer_start)
        turns.append(Turn(unit=ThinkingUnit(index=len(turns) + 1, text=unit_text), answer=answer))
        pos = answer_end
    return MultiTurnResponse(turns=tuple(turns))


_BOXED = "\\boxed{"


def extract_boxed(answer_text: str) -> str:
    """Pull the content of the last balanced \\boxed{...} group.

    Without a balanced group, falls back to the trimmed trailing line of
    the text (empty string when the text is blank).
    """
    start = answer_text.rfind(_BOXED)
    while start >= 0:
        i = start + len(_BOXED)
        depth = 1
        while i < len(answer_text):
            ch = answer_text[i]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return answer_text[start + len(_BOXED) : i]
            i += 1
        start = answer_text.rfind(_BOXED, 0, start)
    stripped = answer_text.strip()
    if not stripped:
        return ""
    return stripped.splitlines()[-1].strip()


def _parse_number(s: str):
    """Return the numeric value of s, or None when it is not a plain number."""
    # Only spaces hugging a fraction slash are cosmetic; any other internal
    # space (or a digit-group underscore) means "not a plain number".
    candidate = re.sub(r"\s*/\s*", "/", s.strip())
    if not candidate or "_" in candidate or any(ch.isspace() for ch in candidate):
        return None
    try:
        return int(candidate)
    except ValueError:
        pass
    try:
        value = float(candidate)
        return value if math.isfinite(value) else None
    except ValueError:
        pass
    if "/" in candidate:
        try:
            return Fraction(candidate)
        except (ValueError, ZeroDivisionError):
            return None
    return None


def _canonical_number(value) -> str:
    f = float(value)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def normalize_answer(text: str) -> str:
    """Canonicalize an answer string for comparison.

    Trims and collapses whitespace, drops \\left/\\right sizing commands,
    strips one outer $...$ pair, and renders plain numbers (including
    simple fractions) in a canonical decimal form.  Idempotent.
    """
    s = text.strip()
    s = s.replace("\\left", "").replace("\\right", "")
    if len(s) >= 2 and s.startswith("$") and s.endswith("$"):
        s = s[1:-1]
    s = " ".join(s.split())
    value = _parse_number(s)
    if value is not None:
        return _canonical_number(value)
    return s


def answers_equal(a: str, b: str) -> bool:
    """Compare two answers: numerically within tolerance when both are
    numbers, by normalized string equality otherwise."""
    na, nb = normalize_answer(a), normalize_answer(b)
    va, vb = _parse_number(na), _parse_number(nb)
    if va is not None and vb is not None:
        return abs(float(va) - float(vb)) <= NUMERIC_TOLERANCE
    return na == nb
