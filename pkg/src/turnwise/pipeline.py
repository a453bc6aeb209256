"""Dataset pipeline: from raw think-then-answer traces to multi-turn
SFT examples, with per-record redundancy measurement.

Stages, per record:
  1. rejection filter: keep only traces whose final answer matches gold
  2. segmentation: split the think segment into units (rule or remote)
  3. prefix probes: for each k, close the think block after the first k
     units and let the model answer from that prefix
  4. emission: render prompt/target pairs; a record with an unusable
     probe is excluded from emission but still counted

The probe results also yield the redundancy rate: with n units and the
first correct prefix at n*, the fraction (n - n*)/n of the trace was
unnecessary (0 when the final answer was wrong).
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .backend import BackendClient, BackendError, GenerationRequest
from .core import (
    MultiTurnResponse,
    Query,
    ThinkingUnit,
    Turn,
    answers_equal,
    extract_boxed,
    render_multi_turn,
)
from .prompts import qa_prompt
from .rewards import check_format
from .segment import MarkerLexicon, SegmentationResult, segment_rule_based

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"


class MissingGold(ValueError):
    pass


class IncompleteProbes(ValueError):
    pass


@dataclass(frozen=True)
class RawTraceRecord:
    """One sampled trace: the query, its think segment, and final answer."""

    query: Query
    think_text: str
    final_answer_text: str
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.think_text:
            raise ValueError("think_text must be non-empty")
        if not self.final_answer_text:
            raise ValueError("final_answer_text must be non-empty")


@dataclass(frozen=True)
class PrefixProbeResult:
    """Answer produced from the first k units; correct is None when the
    probe failed (backend error or empty answer) and nothing is known."""

    k: int
    answer_k: str
    correct: bool | None
    error: str | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k is 1-based")

    @property
    def indeterminate(self) -> bool:
        return self.correct is None


@dataclass(frozen=True)
class RedundancyReport:
    n: int
    n_star: int
    final_correct: bool
    urr: float

    def __post_init__(self):
        if not 1 <= self.n_star <= self.n:
            raise ValueError("n_star must lie in 1..n")
        if not 0 <= self.urr < 1:
            raise ValueError("urr must lie in [0, 1)")
        if not self.final_correct and self.urr != 0:
            raise ValueError("urr is 0 for incorrect final answers")


@dataclass(frozen=True)
class SftExample:
    prompt: str
    target: str

    def __post_init__(self):
        if not check_format(self.target):
            raise ValueError("target must parse as alternating think/answer turns")


def record_correct(record: RawTraceRecord) -> bool:
    """The rejection-filter predicate, same matcher the reward uses."""
    if not record.query.gold_answer:
        raise MissingGold(f"record {record.query.id} has no gold answer")
    return answers_equal(extract_boxed(record.final_answer_text), record.query.gold_answer)


def rejection_filter(records: Sequence[RawTraceRecord]) -> list[RawTraceRecord]:
    """Keep the records whose final answer matches their gold answer."""
    return [r for r in records if record_correct(r)]


def complete_intermediate_answers(
    query: Query,
    units: Sequence[ThinkingUnit],
    backend: BackendClient,
    temperature: float = 0.6,
    top_p: float = 0.95,
    max_tokens: int = 512,
) -> list[PrefixProbeResult]:
    """Probe every think prefix: close the block after k units and let
    the model answer.  A failed probe is recorded as indeterminate and
    the remaining prefixes still run.
    """
    if not units:
        raise ValueError("need at least one unit to probe")
    if not query.gold_answer:
        raise MissingGold(f"query {query.id} has no gold answer")
    prompt = qa_prompt(query.problem)
    results: list[PrefixProbeResult] = []
    prefix = ""
    for k, unit in enumerate(units, start=1):
        prefix += unit.text
        context = prompt + THINK_OPEN + prefix
        request = GenerationRequest(
            context="",
            stop=(THINK_OPEN,),
            max_tokens=max_tokens,
            temperature=temperature,
            top_p=top_p,
        )
        try:
            result = backend.continue_with_forced_suffix(context, THINK_CLOSE, request)
        except BackendError as exc:
            results.append(
                PrefixProbeResult(k=k, answer_k="", correct=None, error=str(exc))
            )
            continue
        answer = result.text.strip()
        if not answer:
            results.append(
                PrefixProbeResult(k=k, answer_k="", correct=None, error="empty answer")
            )
            continue
        correct = answers_equal(extract_boxed(answer), query.gold_answer)
        results.append(PrefixProbeResult(k=k, answer_k=answer, correct=correct))
    return results


def build_sft_example(
    query: Query,
    units: Sequence[ThinkingUnit],
    probe_results: Sequence[PrefixProbeResult],
) -> SftExample:
    """Assemble the training pair: prompt and the multi-turn target that
    interleaves each unit with its probed answer."""
    if len(probe_results) != len(units) or [p.k for p in probe_results] != list(
        range(1, len(units) + 1)
    ):
        raise IncompleteProbes("probe results must cover k = 1..n in order")
    bad = [p.k for p in probe_results if p.indeterminate]
    if bad:
        raise IncompleteProbes(f"indeterminate probes at k = {bad}")
    turns = tuple(
        Turn(unit=ThinkingUnit(index=k, text=unit.text), answer=probe.answer_k)
        for k, (unit, probe) in enumerate(zip(units, probe_results), start=1)
    )
    target = render_multi_turn(MultiTurnResponse(turns=turns))
    return SftExample(prompt=qa_prompt(query.problem), target=target)


def compute_urr(
    probe_results: Sequence[PrefixProbeResult], final_correct: bool
) -> RedundancyReport:
    """Redundancy rate from probe correctness.

    n* is the smallest k whose probe answered correctly; when no prefix
    is correct, n* = n and nothing was redundant.  Indeterminate probes
    count as not correct.  An incorrect final answer pins the rate to 0.
    """
    if not probe_results:
        raise ValueError("need at least one probe result")
    n = len(probe_results)
    correct_ks = [p.k for p in probe_results if p.correct]
    n_star = min(correct_ks) if correct_ks else n
    urr = (n - n_star) / n if final_correct else 0.0
    return RedundancyReport(n=n, n_star=n_star, final_correct=final_correct, urr=urr)


@dataclass(frozen=True)
class RedundancySummary:
    count: int
    mean_urr: float | None
    n_histogram: dict
    n_star_histogram: dict


def aggregate_redundancy(reports: Sequence[RedundancyReport]) -> RedundancySummary:
    """Corpus mean of urr plus distributions of n and n*."""
    if not reports:
        return RedundancySummary(count=0, mean_urr=None, n_histogram={}, n_star_histogram={})
    n_hist: dict[int, int] = {}
    ns_hist: dict[int, int] = {}
    for r in reports:
        n_hist[r.n] = n_hist.get(r.n, 0) + 1
        ns_hist[r.n_star] = ns_hist.get(r.n_star, 0) + 1
    mean = sum(r.urr for r in reports) / len(reports)
    return RedundancySummary(
        count=len(reports),
        mean_urr=mean,
        n_histogram=dict(sorted(n_hist.items())),
        n_star_histogram=dict(sorted(ns_hist.items())),
    )


_LEXEME = re.compile(r"[A-Za-z0-9]+(?:-[A-Za-z0-9]+)*")


def cue_frequency(texts: Iterable[str], cue_words: Sequence[str]) -> dict:
    """Case-sensitive whole-lexeme counts of each cue word.

    Hyphenated forms are single lexemes, so "check" never counts inside
    "double-check".
    """
    counts = {w: 0 for w in cue_words}
    wanted = set(cue_words)
    for text in texts:
        for token in _LEXEME.findall(text):
            if token in wanted:
                counts[token] += 1
    return counts


# ---------------------------------------------------------------------------
# record-level driver and file I/O


@dataclass(frozen=True)
class PipelineOutcome:
    """Everything the pipeline produced for one input record."""

    record: RawTraceRecord
    kept: bool
    segmentation: SegmentationResult | None = None
    probes: tuple[PrefixProbeResult, ...] = ()
    report: RedundancyReport | None = None
    sft: SftExample | None = None
    note: str = ""


def process_record(
    record: RawTraceRecord,
    backend: BackendClient,
    lexicon: MarkerLexicon | None = None,
    segmenter=None,
    probe_max_tokens: int = 512,
) -> PipelineOutcome:
    """Run one record through filter, segmentation, probes, and emission."""
    if not record_correct(record):
        return PipelineOutcome(record=record, kept=False, note="rejected: final answer wrong")
    if segmenter is None:
        segmentation = segment_rule_based(record.think_text, lexicon)
    else:
        segmentation = segmenter(record.think_text)
    probes = tuple(
        complete_intermediate_answers(
            record.query, segmentation.units, backend, max_tokens=probe_max_tokens
        )
    )
    report = compute_urr(probes, final_correct=True)
    if any(p.indeterminate for p in probes):
        return PipelineOutcome(
            record=record,
            kept=True,
            segmentation=segmentation,
            probes=probes,
            report=report,
            sft=None,
            note="skipped emission: indeterminate probe",
        )
    sft = build_sft_example(record.query, segmentation.units, probes)
    return PipelineOutcome(
        record=record, kept=True, segmentation=segmentation, probes=probes,
        report=report, sft=sft,
    )


def run_pipeline(
    records: Sequence[RawTraceRecord],
    backend: BackendClient,
    lexicon: MarkerLexicon | None = None,
    segmenter=None,
    workers: int = 4,
    probe_max_tokens: int = 512,
) -> list[PipelineOutcome]:
    """Process records with bounded parallelism, preserving input order."""
    if not records:
        return []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(
            pool.map(
                lambda r: process_record(
                    r, backend, lexicon=lexicon, segmenter=segmenter,
                    probe_max_tokens=probe_max_tokens,
                ),
                records,
            )
        )


def read_trace_records(path: str | Path) -> list[RawTraceRecord]:
    """Load line-delimited records {id, problem, answer, think, response}."""
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            records.append(
                RawTraceRecord(
                    query=Query(
                        id=str(data["id"]),
                        problem=data["problem"],
                        gold_answer=data.get("answer"),
                    ),
                    think_text=data["think"],
                    final_answer_text=data["response"],
                    source={k: v for k, v in data.items()
                            if k not in ("id", "problem", "answer", "think", "response")},
                )
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad record: {exc}") from exc
    return records


def write_sft_examples(path: str | Path, outcomes: Iterable[PipelineOutcome]) -> int:
    """Write {id, prompt, target} lines for every emitted example."""
    written = 0
    with open(path, "w", encoding="utf-8") as fh:
        for outcome in outcomes:
            if outcome.sft is None:
                continue
            fh.write(json.dumps({
                "id": outcome.record.query.id,
                "prompt": outcome.sft.prompt,
                "target": outcome.sft.target,
            }) + "\n")
            written += 1
    return written


def summary_to_dict(summary: RedundancySummary) -> dict:
    return {
        "count": summary.count,
        "mean_urr": summary.mean_urr,
        "n_histogram": {str(k): v for k, v in summary.n_histogram.items()},
        "n_star_histogram": {str(k): v for k, v in summary.n_star_histogram.items()},
    }


def format_summary_table(summary: RedundancySummary) -> str:
    """Human-readable redundancy summary."""
    lines = [f"records analyzed: {summary.count}"]
    if summary.mean_urr is None:
        lines.append("mean redundancy: n/a (no reports)")
        return "\n".join(lines)
    lines.append(f"mean redundancy: {summary.mean_urr:.4f}")
    lines.append(f"{'units n':>10} {'count':>6}")
    for n, c in summary.n_histogram.items():
        lines.append(f"{n:>10} {c:>6}")
    lines.append(f"{'n*':>10} {'count':>6}")
    for n, c in summary.n_star_histogram.items():
        lines.append(f"{n:>10} {c:>6}")
    return "\n".join(lines)
