/**
 * Session view state, fed by gateway envelopes.
 *
 * One store per open session. All updates flow through apply(), one
 * envelope at a time, so the view is always a function of an ordered
 * event prefix. Guarantees the UI relies on:
 *
 *  - duplicate envelopes are dropped (seq <= highest seq already applied)
 *  - turn cards appear in turn order and never reorder
 *  - live counters (output tokens, TTFT, elapsed) never decrease
 *  - at most one decision prompt is active at a time
 *
 * Think and answer text accumulate from deltas for incremental display,
 * then snap to the canonical text carried by turn_completed. The drift
 * flags record whether snapping actually changed anything beyond answer
 * trimming; a clean stream keeps them false.
 */

import type { DecisionOutcome } from "./api.js";
import type {
  AwaitingDecision,
  Envelope,
  SessionCompleted,
  SessionFailed,
  SessionStarted,
  SessionStats,
  TextDelta,
  TurnCompleted,
  TurnStarted,
} from "./types.js";
import type { ConnectionStatus } from "./sse.js";

export interface TurnCard {
  turn: number;
  think: string;
  answer: string;
  thinkTokens: number | null;
  answerTokens: number | null;
  outputTokens: number | null;
  forcedClose: boolean;
  completed: boolean;
  thinkDrift: boolean;
  answerDrift: boolean;
}

export interface DecisionView {
  awaiting: boolean;
  turn: number | null;
  timeoutS: number | null;
  // a decision was submitted and the server has not answered yet
  pending: boolean;
  notice: string | null;
}

export interface SessionView {
  sessionId: string;
  queryId: string | null;
  problem: string;
  status: string;
  haltPolicy: string | null;
  maxTurns: number | null;
  turns: TurnCard[];
  outputTokens: number;
  ttftMs: number | null;
  elapsedMs: number;
  finalAnswer: string | null;
  haltOrigin: string | null;
  finalStats: SessionStats | null;
  error: string | null;
  serverTranscript: string | null;
  connection: ConnectionStatus | "connecting";
  connectionDetail: string | null;
  decision: DecisionView;
  lastSeq: number;
}

const TERMINAL_STATUSES = ["completed", "failed"];

export class SessionStore {
  private readonly now: () => number;
  private readonly startedAt: number;
  private view_: SessionView;

  constructor(sessionId: string, problem: string, now: () => number = Date.now) {
    this.now = now;
    this.startedAt = now();
    this.view_ = {
      sessionId,
      queryId: null,
      problem,
      status: "connecting",
      haltPolicy: null,
      maxTurns: null,
      turns: [],
      outputTokens: 0,
      ttftMs: null,
      elapsedMs: 0,
      finalAnswer: null,
      haltOrigin: null,
      finalStats: null,
      error: null,
      serverTranscript: null,
      connection: "connecting",
      connectionDetail: null,
      decision: { awaiting: false, turn: null, timeoutS: null, pending: false, notice: null },
      lastSeq: -1,
    };
  }

  get view(): SessionView {
    return this.view_;
  }

  /** Transcript rebuilt from the turn cards, in the wire form. */
  transcript(): string {
    return this.view_.turns
      .map((card) => `<think>${card.think}</think>${card.answer}`)
      .join("");
  }

  get terminal(): boolean {
    return TERMINAL_STATUSES.includes(this.view_.status);
  }

  /** Advance the elapsed counter; frozen once the session is terminal. */
  tick(): void {
    if (this.terminal) return;
    this.view_.elapsedMs = Math.max(this.view_.elapsedMs, this.now() - this.startedAt);
  }

  setConnection(status: ConnectionStatus | "connecting", detail?: string): void {
    this.view_.connection = status;
    this.view_.connectionDetail = detail ?? null;
  }

  /**
   * Apply one envelope. Returns false (and changes nothing) for
   * duplicates, replays from before the resume point, and envelopes
   * that belong to a different session.
   */
  apply(envelope: Envelope): boolean {
    const v = this.view_;
    if (envelope.session_id !== v.sessionId) return false;
    if (envelope.seq <= v.lastSeq) return false;
    v.lastSeq = envelope.seq;
    this.tick();

    switch (envelope.event) {
      case "session_started":
        this.onSessionStarted(envelope.data as unknown as SessionStarted);
        break;
      case "turn_started":
        this.onTurnStarted(envelope.data as unknown as TurnStarted);
        break;
      case "think_delta":
        this.onThinkDelta(envelope.data as unknown as TextDelta);
        break;
      case "answer_delta":
        this.onAnswerDelta(envelope.data as unknown as TextDelta);
        break;
      case "turn_completed":
        this.onTurnCompleted(envelope.data as unknown as TurnCompleted);
        break;
      case "awaiting_decision":
        this.onAwaitingDecision(envelope.data as unknown as AwaitingDecision);
        break;
      case "session_completed":
        this.onSessionCompleted(envelope.data as unknown as SessionCompleted);
        break;
      case "session_failed":
        this.onSessionFailed(envelope.data as unknown as SessionFailed);
        break;
      default:
        // unknown event types are kept for seq continuity but render nothing
        break;
    }
    return true;
  }

  /** The user clicked a decision button; block the pair until the reply. */
  markDecisionPending(): void {
    const d = this.view_.decision;
    if (!d.awaiting || d.pending) return;
    d.pending = true;
    d.notice = null;
  }

  /** Fold the gateway's reply to a posted decision back into the view. */
  resolveDecision(outcome: DecisionOutcome): void {
    const d = this.view_.decision;
    d.pending = false;
    if (outcome.ok) {
      // consumed: the next state arrives as turn_started or session_completed
      d.awaiting = false;
      return;
    }
    if (outcome.status === 409) {
      d.awaiting = false;
      d.notice = "decision window closed";
      return;
    }
    // transient failure: leave the prompt up so the user can retry
    d.notice = outcome.detail ?? `decision failed (HTTP ${outcome.status})`;
  }

  private clearDecision(): void {
    const d = this.view_.decision;
    d.awaiting = false;
    d.turn = null;
    d.timeoutS = null;
    d.pending = false;
  }

  /** Card for 1-based turn number, creating missing cards in order. */
  private card(turn: number): TurnCard {
    const turns = this.view_.turns;
    while (turns.length < turn) {
      turns.push({
        turn: turns.length + 1,
        think: "",
        answer: "",
        thinkTokens: null,
        answerTokens: null,
        outputTokens: null,
        forcedClose: false,
        completed: false,
        thinkDrift: false,
        answerDrift: false,
      });
    }
    return turns[turn - 1];
  }

  private onSessionStarted(data: SessionStarted): void {
    const v = this.view_;
    v.queryId = data.query_id;
    v.problem = data.problem;
    v.maxTurns = data.max_turns;
    v.haltPolicy = data.halt_policy;
    v.status = "thinking";
  }

  private onTurnStarted(data: TurnStarted): void {
    this.card(data.turn);
    this.view_.status = "thinking";
    // a continue decision has taken effect; the prompt is gone
    this.clearDecision();
  }

  private onThinkDelta(data: TextDelta): void {
    this.card(data.turn).think += data.text;
    this.view_.status = "thinking";
  }

  private onAnswerDelta(data: TextDelta): void {
    this.card(data.turn).answer += data.text;
    this.view_.status = "answering";
    if (this.view_.ttftMs === null && data.turn === 1) {
      this.view_.ttftMs = Math.max(0, this.now() - this.startedAt);
    }
  }

  private onTurnCompleted(data: TurnCompleted): void {
    const card = this.card(data.turn);
    const alreadyCounted = card.completed;
    card.thinkDrift = card.think !== data.unit;
    card.answerDrift = card.answer.trim() !== data.answer;
    card.think = data.unit;
    card.answer = data.answer;
    card.thinkTokens = data.think_tokens;
    card.answerTokens = data.answer_tokens;
    card.outputTokens = data.output_tokens;
    card.forcedClose = data.forced_close;
    card.completed = true;
    const v = this.view_;
    if (!alreadyCounted) {
      v.outputTokens += data.output_tokens;
    }
    v.status = "thinking";
  }

  private onAwaitingDecision(data: AwaitingDecision): void {
    this.view_.status = "awaiting_decision";
    this.view_.decision = {
      awaiting: true,
      turn: data.turn,
      timeoutS: data.timeout_s,
      pending: false,
      notice: this.view_.decision.notice,
    };
  }

  private onSessionCompleted(data: SessionCompleted): void {
    const v = this.view_;
    v.status = "completed";
    v.finalAnswer = data.final_answer;
    v.haltOrigin = data.halt_origin;
    v.serverTranscript = data.transcript;
    v.finalStats = data.stats;
    v.outputTokens = Math.max(v.outputTokens, data.stats.output_tokens);
    if (v.ttftMs === null) v.ttftMs = data.stats.ttft_ms;
    this.clearDecision();
  }

  private onSessionFailed(data: SessionFailed): void {
    const v = this.view_;
    v.status = "failed";
    v.error = data.error;
    v.serverTranscript = data.transcript;
    this.clearDecision();
  }
}
