"""Live multi-turn decoding loop.

Each turn runs two streamed phases against the backend: a think phase
stopped at "</think>" (force-closed when the per-turn think budget runs
out first), then an answer phase stopped at "<think>".  An answer phase
that ends without hitting "<think>" means the model finished the whole
session.  Between turns a halting policy decides continue or halt:
fixed runs to max_turns, consistency halts when the last few answers
agree, manual blocks on an external decision queue with a timeout that
defaults to halting.

TTFT is the time from session start to the first streamed token of
turn 1's answer phase; think-phase tokens never count.
"""

from __future__ import annotations

import queue
import time
from dataclasses import dataclass, field
from typing import Callable

from .backend import BackendClient, BackendError, GenerationRequest
from .core import (
    MultiTurnResponse,
    Query,
    ThinkingUnit,
    TokenStats,
    Turn,
    answers_equal,
    extract_boxed,
)
from .prompts import qa_prompt

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

HALT_POLICIES = ("fixed", "consistency", "manual")

EventCallback = Callable[[str, dict], None]


class SessionError(RuntimeError):
    """Turn execution failed; carries the partial session state."""

    def __init__(self, message: str, state: "SessionState"):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class SessionConfig:
    max_turns: int = 8
    halt_policy: str = "fixed"
    consistency_window: int = 2
    think_budget: int = 2048
    answer_budget: int = 1024
    temperature: float = 0.6
    top_p: float = 0.95
    decision_timeout_s: float = 300.0

    def __post_init__(self):
        if self.max_turns < 1:
            raise ValueError("max_turns must be at least 1")
        if self.halt_policy not in HALT_POLICIES:
            raise ValueError(f"unknown halt policy {self.halt_policy!r}")
        if self.halt_policy == "consistency" and self.consistency_window < 2:
            raise ValueError("consistency window must be at least 2")
        if self.think_budget < 1 or self.answer_budget < 1:
            raise ValueError("per-turn budgets must be at least 1 token")
        if self.decision_timeout_s <= 0:
            raise ValueError("decision timeout must be positive")


@dataclass(frozen=True)
class HaltDecision:
    action: str  # "continue" | "halt"
    origin: str  # "policy" | "external" | "timeout"

    def __post_init__(self):
        if self.action not in ("continue", "halt"):
            raise ValueError(f"unknown action {self.action!r}")
        if self.origin not in ("policy", "external", "timeout"):
            raise ValueError(f"unknown origin {self.origin!r}")


@dataclass(frozen=True)
class TurnRecord:
    turn: Turn
    stats: TokenStats
    think_tokens: int
    answer_tokens: int
    forced_close: bool
    tokens_estimated: bool


@dataclass
class SessionState:
    query: Query
    config: SessionConfig
    status: str = "thinking"
    turns: list[TurnRecord] = field(default_factory=list)
    context: str = ""
    started_at: float = 0.0
    ttft_ms: float | None = None
    model_finished: bool = False
    error: str | None = None
    decisions: "queue.Queue[str]" = field(default_factory=queue.Queue)

    @property
    def transcript(self) -> str:
        return "".join(
            f"{THINK_OPEN}{r.turn.unit.text}{THINK_CLOSE}{r.turn.answer}" for r in self.turns
        )

    @property
    def answers(self) -> list[str]:
        return [r.turn.answer for r in self.turns]

    def cumulative_stats(self, now: float | None = None) -> TokenStats:
        now = time.monotonic() if now is None else now
        total_ms = max(0.0, (now - self.started_at) * 1000)
        ttft = self.ttft_ms if self.ttft_ms is not None else total_ms
        return TokenStats(
            prompt_tokens=sum(r.stats.prompt_tokens for r in self.turns),
            output_tokens=sum(r.stats.output_tokens for r in self.turns),
            ttft_ms=min(ttft, total_ms),
            total_ms=total_ms,
        )


@dataclass(frozen=True)
class SessionResult:
    response: MultiTurnResponse
    stats: TokenStats
    state: SessionState

    @property
    def final_answer(self) -> str:
        return self.response.final_answer


def _strip_think_open(text: str) -> str:
    """Drop the leading think-open tag (after whitespace) from streamed
    think text; returns "" while the seen prefix is still ambiguous."""
    t = text.lstrip()
    if t.startswith(THINK_OPEN):
        return t[len(THINK_OPEN):]
    if THINK_OPEN.startswith(t):
        return ""
    return t


def _emit(on_event: EventCallback | None, name: str, payload: dict) -> None:
    if on_event is not None:
        on_event(name, payload)


def run_turn(
    state: SessionState, backend: BackendClient, on_event: EventCallback | None = None
) -> SessionState:
    """Execute one think+answer turn, mutating and returning state."""
    if state.status in ("completed", "failed"):
        raise ValueError(f"session is {state.status}; no further turns")
    if len(state.turns) >= state.config.max_turns:
        raise ValueError("turn bound already reached")
    cfg = state.config
    turn_index = len(state.turns) + 1
    turn_started = time.monotonic()
    _emit(on_event, "turn_started", {"turn": turn_index})

    state.status = "thinking"
    # strip from the raw prefix on every delta: a tag split across small
    # deltas ("<", "think>...") must not leak its tail into the stream
    raw_think = ""

    def think_sink(event) -> None:
        nonlocal raw_think
        before = _strip_think_open(raw_think)
        raw_think += event.delta
        after = _strip_think_open(raw_think)
        delta = after[len(before):] if after.startswith(before) else after
        if delta:
            _emit(on_event, "think_delta", {"turn": turn_index, "text": delta})

    think_request = GenerationRequest(
        context=state.context,
        stop=(THINK_CLOSE,),
        max_tokens=cfg.think_budget,
        temperature=cfg.temperature,
        top_p=cfg.top_p,
        stream=True,
    )
    try:
        think = backend.generate_stream(think_request, think_sink)
    except BackendError as exc:
        state.status = "failed"
        state.error = f"think phase of turn {turn_index}: {exc}"
        _emit(on_event, "session_failed", {"error": state.error, "transcript": state.transcript})
        raise SessionError(state.error, state) from exc

    unit_text = _strip_think_open(think.text)
    forced_close = think.matched_stop != THINK_CLOSE
    state.context = state.context + think.text + THINK_CLOSE

    state.status = "answering"
    first_answer_at: float | None = None

    def answer_sink(event) -> None:
        nonlocal first_answer_at
        if first_answer_at is None:
            first_answer_at = event.timestamp
        _emit(on_event, "answer_delta", {"turn": turn_index, "text": event.delta})

    answer_request = GenerationRequest(
        context=state.context,
        stop=(THINK_OPEN,),
        max_tokens=cfg.answer_budget,
        temperature=cfg.temperature,
        top_p=cfg.top_p,
        stream=True,
    )
    try:
        answer = backend.generate_stream(answer_request, answer_sink)
    except BackendError as exc:
        state.status = "failed"
        state.error = f"answer phase of turn {turn_index}: {exc}"
        _emit(on_event, "session_failed", {"error": state.error, "transcript": state.transcript})
        raise SessionError(state.error, state) from exc

    state.context = state.context + answer.text
    if turn_index == 1 and state.ttft_ms is None and first_answer_at is not None:
        state.ttft_ms = (first_answer_at - state.started_at) * 1000

    try:
        turn = Turn(
            unit=ThinkingUnit(index=turn_index, text=unit_text),
            answer=answer.text,
        )
    except ValueError as exc:
        state.status = "failed"
        state.error = f"turn {turn_index} produced malformed output: {exc}"
        _emit(on_event, "session_failed", {"error": state.error, "transcript": state.transcript})
        raise SessionError(state.error, state) from exc

    ended = time.monotonic()
    ttft_ms = ((first_answer_at or ended) - turn_started) * 1000
    stats = TokenStats(
        prompt_tokens=think.prompt_tokens,
        output_tokens=think.output_tokens + answer.output_tokens,
        ttft_ms=min(ttft_ms, (ended - turn_started) * 1000),
        total_ms=(ended - turn_started) * 1000,
    )
    record = TurnRecord(
        turn=turn,
        stats=stats,
        think_tokens=think.output_tokens,
        answer_tokens=answer.output_tokens,
        forced_close=forced_close,
        tokens_estimated=think.usage_estimated or answer.usage_estimated,
    )
    state.turns.append(record)
    # the model ends the session itself by not opening another think block
    state.model_finished = answer.matched_stop != THINK_OPEN
    _emit(
        on_event,
        "turn_completed",
        {
            "turn": turn_index,
            "unit": turn.unit.text,
            "answer": turn.answer,
            "think_tokens": record.think_tokens,
            "answer_tokens": record.answer_tokens,
            "output_tokens": stats.output_tokens,
            "forced_close": forced_close,
        },
    )
    return state


def decide_halt(
    state: SessionState, on_event: EventCallback | None = None
) -> HaltDecision:
    """Consult the session's halting policy after a completed turn."""
    if not state.turns:
        raise ValueError("no completed turn to decide on")
    cfg = state.config
    if cfg.halt_policy == "fixed":
        action = "halt" if len(state.turns) >= cfg.max_turns else "continue"
        return HaltDecision(action=action, origin="policy")
    if cfg.halt_policy == "consistency":
        w = cfg.consistency_window
        if len(state.turns) >= w:
            last = [extract_boxed(a) for a in state.answers[-w:]]
            if all(answers_equal(last[0], other) for other in last[1:]):
                return HaltDecision(action="halt", origin="policy")
        return HaltDecision(action="continue", origin="policy")
    # manual: hand control to an external decider, halt on timeout
    state.status = "awaiting_decision"
    _emit(
        on_event,
        "awaiting_decision",
        {"turn": len(state.turns), "timeout_s": cfg.decision_timeout_s},
    )
    try:
        action = state.decisions.get(timeout=cfg.decision_timeout_s)
    except queue.Empty:
        return HaltDecision(action="halt", origin="timeout")
    if action not in ("continue", "halt"):
        raise ValueError(f"external decision must be continue or halt, got {action!r}")
    return HaltDecision(action=action, origin="external")


def run_session(
    query: Query,
    config: SessionConfig,
    backend: BackendClient,
    on_event: EventCallback | None = None,
    state: SessionState | None = None,
) -> SessionResult:
    """Run a full session; returns the parsed response and cumulative stats.

    A caller that needs to feed decisions (manual policy) or observe the
    state mid-run passes its own SessionState.
    """
    if state is None:
        state = SessionState(query=query, config=config)
    state.started_at = time.monotonic()
    state.context = qa_prompt(query.problem)
    _emit(
        on_event,
        "session_started",
        {
            "query_id": query.id,
            "problem": query.problem,
            "max_turns": config.max_turns,
            "halt_policy": config.halt_policy,
        },
    )
    halted_by: HaltDecision | None = None
    while True:
        run_turn(state, backend, on_event)
        if state.model_finished:
            break
        if len(state.turns) >= config.max_turns:
            break
        decision = decide_halt(state, on_event)
        if decision.action == "halt":
            halted_by = decision
            break
        state.status = "thinking"

    state.status = "completed"
    stats = state.cumulative_stats()
    response = MultiTurnResponse(turns=tuple(r.turn for r in state.turns))
    _emit(
        on_event,
        "session_completed",
        {
            "final_answer": response.final_answer,
            "turns": len(state.turns),
            "transcript": state.transcript,
            "halt_origin": halted_by.origin if halted_by else "policy",
            "stats": {
                "prompt_tokens": stats.prompt_tokens,
                "output_tokens": stats.output_tokens,
                "ttft_ms": stats.ttft_ms,
                "total_ms": stats.total_ms,
            },
        },
    )
    return SessionResult(response=response, stats=stats, state=state)
