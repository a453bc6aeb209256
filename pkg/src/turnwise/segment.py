"""Split a monolithic think segment into thinking units.

Two paths produce the same result shape.  The rule-based path is pure
and deterministic: a new unit starts wherever a lexicon marker opens a
sentence.  The remote path asks a model to insert [split] delimiters,
verifies the reply did not alter the text, and maps the delimiters back
onto the original string so units stay byte-exact slices of it.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import ThinkingUnit
from .prompts import decompose_prompt

DEFAULT_MARKERS = (
    "Wait",
    "Alternatively",
    "Hmm",
    "But wait",
    "Let me double-check",
    "Let me verify",
    "Another way",
    "Alternatively,",
)

SPLIT_DELIMITER = "[split]"

# Characters that may end the sentence preceding a unit boundary.
_SENTENCE_ENDERS = frozenset(".?!\n\r")


class EmptyInput(ValueError):
    pass


class RoundTripMismatch(ValueError):
    """The remote reply changed the text beyond whitespace reflow."""


@dataclass(frozen=True)
class MarkerLexicon:
    """Ordered, case-sensitive phrases that open a new thinking unit."""

    markers: tuple[str, ...] = DEFAULT_MARKERS

    def __post_init__(self):
        object.__setattr__(self, "markers", tuple(self.markers))
        if not self.markers:
            raise ValueError("lexicon must contain at least one marker")
        if any(not m for m in self.markers):
            raise ValueError("markers must be non-empty")
        if len(set(self.markers)) != len(self.markers):
            raise ValueError("markers must be unique")


@dataclass(frozen=True)
class SegmentationResult:
    """Units covering the input text, with the boundary offsets used."""

    units: tuple[ThinkingUnit, ...]
    method: str  # "rule" or "remote"
    boundaries: tuple[int, ...]
    fallback_used: bool = False

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "boundaries", tuple(self.boundaries))
        if self.method not in ("rule", "remote"):
            raise ValueError(f"unknown segmentation method {self.method!r}")
        if not self.units:
            raise ValueError("segmentation produced no units")
        if len(self.boundaries) != len(self.units):
            raise ValueError("one boundary per unit required")
        if self.boundaries[0] != 0:
            raise ValueError("first boundary must be 0")
        if any(b >= c for b, c in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("boundaries must be strictly increasing")

    @property
    def text(self) -> str:
        return "".join(u.text for u in self.units)


def _is_sentence_initial(text: str, pos: int) -> bool:
    """A marker position opens a sentence when only blanks separate it
    from the start of text or from sentence-ending punctuation."""
    i = pos - 1
    while i >= 0 and text[i] in " \t":
        i -= 1
    return i < 0 or text[i] in _SENTENCE_ENDERS


def marker_positions(text: str, lexicon: MarkerLexicon) -> list[int]:
    """All sentence-initial marker occurrences, as sorted offsets.

    A marker ending in a word character must not run into another word
    character ("Wait" never matches inside "Kuwaiti" or "Waiting").
    """
    positions: set[int] = set()
    for marker in lexicon.markers:
        start = 0
        while True:
            pos = text.find(marker, start)
            if pos < 0:
                break
            start = pos + 1
            if not _is_sentence_initial(text, pos):
                continue
            end = pos + len(marker)
            if marker[-1].isalnum() and end < len(text) and text[end].isalnum():
                continue
            positions.add(pos)
    return sorted(positions)


def segment_rule_based(think_text: str, lexicon: MarkerLexicon | None = None) -> SegmentationResult:
    """Cut think_text at sentence-initial lexicon markers.

    Units are byte-exact slices: their concatenation is think_text.
    Markers separated from the start only by whitespace do not open a
    second unit (unit 1 always starts at offset 0).
    """
    if not think_text:
        raise EmptyInput("cannot segment empty text")
    lexicon = lexicon or MarkerLexicon()
    interior = [
        p for p in marker_positions(think_text, lexicon) if think_text[:p].strip()
    ]
    boundaries = [0] + interior
    units = tuple(
        ThinkingUnit(index=i + 1, text=think_text[b:e])
        for i, (b, e) in enumerate(
            zip(boundaries, boundaries[1:] + [len(think_text)])
        )
    )
    return SegmentationResult(units=units, method="rule", boundaries=tuple(boundaries))


def _normalize_ws(s: str) -> str:
    return " ".join(s.split())


def validate_round_trip(original: str, units) -> bool:
    """True iff the unit texts reassemble the original up to whitespace
    reflow (runs collapsed, ends trimmed)."""
    texts = [u.text if isinstance(u, ThinkingUnit) else u for u in units]
    return _normalize_ws("".join(texts)) == _normalize_ws(original)


def _map_reply_boundaries(original: str, reply_units: list[str]) -> list[int]:
    """Project unit boundaries from a whitespace-reflowed reply back onto
    the original text.

    Both strings contain the same non-whitespace characters in the same
    order (the caller validated that), so a boundary after k such
    characters in the reply lands just before non-whitespace character
    k of the original.
    """
    nonws_offsets = [i for i, ch in enumerate(original) if not ch.isspace()]
    boundaries = [0]
    seen = 0
    for unit in reply_units[:-1]:
        seen += sum(1 for ch in unit if not ch.isspace())
        boundaries.append(nonws_offsets[seen])
    return boundaries


def segment_remote(
    think_text: str,
    backend,
    prompt_template: str | None = None,
    question: str = "",
    fallback: bool = True,
    lexicon: MarkerLexicon | None = None,
) -> SegmentationResult:
    """Ask the backend to mark unit boundaries with [split].

    The reply must reproduce think_text (whitespace aside) once the
    delimiters are removed; the delimiters are then mapped back onto
    think_text so the returned units are exact slices of it.  On a
    mismatched reply, falls back to the rule-based path with
    fallback_used set, or raises RoundTripMismatch when fallback is
    disabled.  Backend errors always propagate.
    """
    if not think_text:
        raise EmptyInput("cannot segment empty text")
    prompt = decompose_prompt(question, think_text, template=prompt_template)
    reply = backend.generate_text(prompt, temperature=0.0)
    reply_units = [u for u in reply.split(SPLIT_DELIMITER) if u.strip()]
    if reply_units and validate_round_trip(think_text, reply_units):
        boundaries = _map_reply_boundaries(think_text, reply_units)
        units = tuple(
            ThinkingUnit(index=i + 1, text=think_text[b:e])
            for i, (b, e) in enumerate(zip(boundaries, boundaries[1:] + [len(think_text)]))
        )
        return SegmentationResult(units=units, method="remote", boundaries=tuple(boundaries))
    if not fallback:
        raise RoundTripMismatch("reply does not reassemble the original text")
    rule = segment_rule_based(think_text, lexicon)
    return SegmentationResult(
        units=rule.units, method="remote", boundaries=rule.boundaries, fallback_used=True
    )
