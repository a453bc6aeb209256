"""Prompt templates shipped with the package.

Templates are plain text files with named slots written as {question} or
{prediction}.  Slots are filled in a single pass, so slot-shaped text
inside a filled value is never substituted again.
"""

from __future__ import annotations

import re
from importlib import resources

_SLOT = re.compile(r"\{(question|prediction)\}")


def load_template(name: str) -> str:
    """Read a bundled template by file name (trailing newlines trimmed)."""
    path = resources.files("turnwise.templates").joinpath(name)
    return path.read_text(encoding="utf-8").rstrip("\n")


def fill_slots(template: str, **values: str) -> str:
    """Replace {slot} markers with the given values in one pass."""

    def sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in values:
            raise KeyError(f"template slot {{{key}}} has no value")
        return values[key]

    return _SLOT.sub(sub, template)


def qa_prompt(question: str, template: str | None = None) -> str:
    """Render the question-answering prompt used for every generation."""
    if template is None:
        template = load_template("qa_template.txt")
    return fill_slots(template, question=question)


def decompose_prompt(question: str, prediction: str, template: str | None = None) -> str:
    """Render the prompt asking a model to mark unit boundaries with [split]."""
    if template is None:
        template = load_template("decompose_prompt.txt")
    return fill_slots(template, question=question, prediction=prediction)
