"""Rule-based reward for multi-turn reasoning rollouts.

Three components, summed: format (text parses as alternating think and
answer blocks), accuracy (final boxed answer matches the gold answer),
and unit compactness (no turn restarts reasoning mid-way, detected by
sentence-initial cue words after the turn's opening).  A format failure
forces the other two components to their fail values, since neither a
final answer nor a turn structure exists for malformed text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .core import FormatError, MultiTurnResponse, answers_equal, extract_boxed, parse_multi_turn
from .segment import MarkerLexicon, marker_positions

# Cue words that typically open a fresh reasoning attempt.
DEFAULT_CUE_WORDS = ("Wait", "Alternatively", "double-check", "check", "verify")


def default_cue_lexicon() -> MarkerLexicon:
    return MarkerLexicon(markers=DEFAULT_CUE_WORDS)


def load_cue_lexicon(path: str | Path) -> MarkerLexicon:
    """Read a cue lexicon file: one phrase per line, blanks ignored."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    phrases = tuple(line.strip() for line in lines if line.strip())
    return MarkerLexicon(markers=phrases)


@dataclass(frozen=True)
class RewardConfig:
    """Pass/fail values for each reward component."""

    format_pass: float = 1.0
    format_fail: float = -1.0
    accuracy_pass: float = 2.0
    accuracy_fail: float = -2.0
    unit_pass: float = 0.0
    unit_fail: float = -0.3

    def __post_init__(self):
        for name in ("format", "accuracy", "unit"):
            if getattr(self, f"{name}_pass") < getattr(self, f"{name}_fail"):
                raise ValueError(f"{name} pass value must be >= its fail value")

    @classmethod
    def from_file(cls, path: str | Path) -> "RewardConfig":
        """Load overrides from a JSON object keyed by field name."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown reward config keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class RewardBreakdown:
    format: float
    accuracy: float
    unit: float

    @property
    def total(self) -> float:
        return self.format + self.accuracy + self.unit


def check_format(text: str) -> bool:
    """True iff the text parses as the alternating think/answer form."""
    try:
        parse_multi_turn(text)
    except FormatError:
        return False
    return True


def check_accuracy(response: MultiTurnResponse, gold: str) -> bool:
    """True iff the final answer's boxed content matches the gold answer."""
    if not gold:
        raise ValueError("gold answer must be non-empty")
    return answers_equal(extract_boxed(response.final_answer), gold)


def check_unit_compactness(
    response: MultiTurnResponse, cue_lexicon: MarkerLexicon | None = None
) -> bool:
    """True iff no turn's think text restarts reasoning after its opening.

    A restart is a sentence-initial cue occurrence with any non-blank
    text before it; a cue at the very start of a turn (leading
    whitespace aside) is that unit's own marker and does not count.
    """
    lexicon = cue_lexicon or default_cue_lexicon()
    for turn in response.turns:
        text = turn.unit.text
        for pos in marker_positions(text, lexicon):
            if text[:pos].strip():
                return False
    return True


def compute_reward(
    text: str,
    gold: str,
    reward_config: RewardConfig | None = None,
    cue_lexicon: MarkerLexicon | None = None,
) -> RewardBreakdown:
    """Score one rollout text against the gold answer."""
    cfg = reward_config or RewardConfig()
    try:
        response = parse_multi_turn(text)
    except FormatError:
        return RewardBreakdown(
            format=cfg.format_fail, accuracy=cfg.accuracy_fail, unit=cfg.unit_fail
        )
    accuracy_ok = check_accuracy(response, gold)
    unit_ok = check_unit_compactness(response, cue_lexicon)
    return RewardBreakdown(
        format=cfg.format_pass,
        accuracy=cfg.accuracy_pass if accuracy_ok else cfg.accuracy_fail,
        unit=cfg.unit_pass if unit_ok else cfg.unit_fail,
    )
