/**
 * Wire types for the session gateway's HTTP + SSE API.
 *
 * Every SSE frame carries a JSON envelope; `seq` is the gapless
 * per-session sequence number (also sent as the frame's `id:` line,
 * so it doubles as the Last-Event-ID resume cursor).
 */

export interface Envelope {
  seq: number;
  event: string;
  data: Record<string, unknown>;
  session_id: string;
}

export interface SessionStarted {
  query_id: string;
  problem: string;
  max_turns: number;
  halt_policy: string;
}

export interface TurnStarted {
  turn: number;
}

export interface TextDelta {
  turn: number;
  text: string;
}

export interface TurnCompleted {
  turn: number;
  unit: string;
  answer: string;
  think_tokens: number;
  answer_tokens: number;
  output_tokens: number;
  forced_close: boolean;
}

export interface AwaitingDecision {
  turn: number;
  timeout_s: number;
}

export interface SessionStats {
  prompt_tokens: number;
  output_tokens: number;
  ttft_ms: number | null;
  total_ms: number;
}

export interface SessionCompleted {
  final_answer: string;
  turns: number;
  transcript: string;
  halt_origin: string;
  stats: SessionStats;
}

export interface SessionFailed {
  error: string;
  transcript: string;
}

export interface CreateSessionRequest {
  problem: string;
  id?: string;
  gold_answer?: string;
  // per-session overrides: max_turns, halt_policy, decision_timeout_s, ...
  session?: Record<string, unknown>;
}

export interface CreateSessionResponse {
  session_id: string;
  query_id: string;
  events_url: string;
  max_turns: number;
  halt_policy: string;
}

export interface SessionSnapshot {
  session_id: string;
  query_id: string;
  problem: string;
  status: string;
  turns: number;
  answers: string[];
  final_answer: string | null;
  transcript: string;
  error: string | null;
  stats: SessionStats;
}

export interface HealthResponse {
  status: string;
  sessions: { live: number; total: number };
  backend: { reachable: boolean };
}
