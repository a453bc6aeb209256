"""HTTP gateway exposing live reasoning sessions.

Endpoints:
  POST /v1/sessions             start a session (201; 400 bad input; 429 full)
  GET  /v1/sessions/{id}        snapshot: status, answers, cumulative stats
  GET  /v1/sessions/{id}/events server-sent events with Last-Event-ID resume
  POST /v1/sessions/{id}/decision  continue/halt an awaiting session (409 else)
  GET  /healthz                 service liveness + backend reachability

Each session runs on its own worker thread; every event gets a gapless
per-session sequence number and is kept in a replay buffer so a client
can reconnect and resume from any point. Finished sessions linger for
replay_ttl_s, then a lazy sweep drops them. A decision is applied at
most once per awaiting_decision prompt (epoch guard under the session
condition variable).

SSE framing: `id:` carries the sequence number, `event:` the type, and
`data:` a JSON envelope {seq, event, data, session_id}. Streams close
after a terminal event (session_completed or session_failed).
"""

from __future__ import annotations

import asyncio
import json
import os
import threading
import time
import uuid
from contextlib import asynccontextmanager
from dataclasses import asdict

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse

from .backend import BackendClient
from .config import ServiceConfig
from .controller import (
    SessionConfig,
    SessionError,
    SessionState,
    run_session,
)
from .core import Query

TERMINAL_EVENTS = ("session_completed", "session_failed")
LIVE_STATUSES = ("thinking", "answering", "awaiting_decision")

_POLL_INTERVAL_S = 0.025


class LiveSession:
    """One running session: worker thread, event buffer, decision guard."""

    def __init__(self, session_id: str, query: Query, config: SessionConfig,
                 client: BackendClient, log_dir: str | None = None):
        self.id = session_id
        self.query = query
        self.config = config
        self.client = client
        self.log_dir = log_dir
        self.state = SessionState(query=query, config=config)
        self.events: list[dict] = []
        self.cond = threading.Condition()
        self.done = False
        self.completed_at: float | None = None
        self.awaiting_epoch = 0
        self.decided_epoch = 0
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _run(self) -> None:
        try:
            run_session(
                self.query, self.config, self.client,
                on_event=self._on_event, state=self.state,
            )
        except SessionError:
            pass  # controller already emitted session_failed
        except Exception as exc:
            self._on_event(
                "session_failed",
                {"error": f"internal: {exc}", "transcript": self.state.transcript},
            )
        finally:
            with self.cond:
                if not self.done:
                    self.done = True
                    self.completed_at = time.monotonic()
                    self.cond.notify_all()
            self._write_log()

    def _on_event(self, name: str, payload: dict) -> None:
        with self.cond:
            self.events.append(
                {"seq": len(self.events), "event": name, "data": payload,
                 "session_id": self.id}
            )
            if name == "awaiting_decision":
                self.awaiting_epoch += 1
            if name in TERMINAL_EVENTS:
                self.done = True
                self.completed_at = time.monotonic()
            self.cond.notify_all()

    def _write_log(self) -> None:
        if self.log_dir is None:
            return
        os.makedirs(self.log_dir, exist_ok=True)
        record = {
            "session_id": self.id,
            "query_id": self.query.id,
            "problem": self.query.problem,
            "status": self.state.status,
            "transcript": self.state.transcript,
            "turns": len(self.state.turns),
            "error": self.state.error,
        }
        with open(os.path.join(self.log_dir, f"{self.id}.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(record, fh, indent=2)

    # -- queries -------------------------------------------------------------

    @property
    def live(self) -> bool:
        return not self.done

    def snapshot(self) -> dict:
        with self.cond:
            state = self.state
            stats = state.cumulative_stats()
            answers = state.answers
            return {
                "session_id": self.id,
                "query_id": self.query.id,
                "problem": self.query.problem,
                "status": state.status,
                "turns": len(state.turns),
                "answers": answers,
                "final_answer": answers[-1] if answers else None,
                "transcript": state.transcript,
                "error": state.error,
                "stats": {
                    "prompt_tokens": stats.prompt_tokens,
                    "output_tokens": stats.output_tokens,
                    "ttft_ms": stats.ttft_ms,
                    "total_ms": stats.total_ms,
                },
            }

    def apply_decision(self, action: str) -> tuple[bool, str]:
        """Forward one halt/continue decision; False when not applicable."""
        with self.cond:
            if self.state.status != "awaiting_decision":
                return False, "session is not awaiting a decision"
            if self.decided_epoch >= self.awaiting_epoch:
                return False, "a decision was already applied for this turn"
            self.decided_epoch = self.awaiting_epoch
            self.state.decisions.put(action)
            return True, ""


class SessionRegistry:
    def __init__(self, service: ServiceConfig, client: BackendClient | None = None):
        self.service = service
        self.client = client or BackendClient(service.backend)
        self._sessions: dict[str, LiveSession] = {}
        self._lock = threading.Lock()

    def sweep(self, now: float | None = None) -> None:
        now = time.monotonic() if now is None else now
        with self._lock:
            expired = [
                sid for sid, s in self._sessions.items()
                if s.completed_at is not None
                and now - s.completed_at > self.service.replay_ttl_s
            ]
            for sid in expired:
                del self._sessions[sid]

    def live_count(self) -> int:
        with self._lock:
            return sum(1 for s in self._sessions.values() if s.live)

    def total_count(self) -> int:
        with self._lock:
            return len(self._sessions)

    def create(self, query: Query, config: SessionConfig) -> LiveSession:
        session = LiveSession(
            uuid.uuid4().hex[:12], query, config, self.client,
            log_dir=self.service.transcript_log_dir,
        )
        with self._lock:
            self._sessions[session.id] = session
        session.start()
        return session

    def get(self, session_id: str) -> LiveSession | None:
        with self._lock:
            return self._sessions.get(session_id)

    def close(self) -> None:
        self.client.close()


def _session_config_from(base: SessionConfig, overrides: dict) -> SessionConfig:
    values = asdict(base)
    unknown = set(overrides) - set(values)
    if unknown:
        raise ValueError(f"unknown session settings: {sorted(unknown)}")
    values.update(overrides)
    return SessionConfig(**values)


def _sse_frame(envelope: dict) -> str:
    return (
        f"id: {envelope['seq']}\n"
        f"event: {envelope['event']}\n"
        f"data: {json.dumps(envelope, ensure_ascii=False)}\n\n"
    )


def create_app(config: ServiceConfig,
               registry: SessionRegistry | None = None) -> FastAPI:
    reg = registry or SessionRegistry(config)

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        reg.close()

    app = FastAPI(title="turnwise gateway", lifespan=lifespan)
    app.state.registry = reg

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"detail": message})

    @app.get("/healthz")
    def healthz() -> dict:
        reg.sweep()
        return {
            "status": "ok",
            "sessions": {"live": reg.live_count(), "total": reg.total_count()},
            "backend": {"reachable": reg.client.health()},
        }

    @app.post("/v1/sessions")
    async def create_session(request: Request) -> Response:
        reg.sweep()
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return error(400, "request body must be JSON")
        if not isinstance(body, dict):
            return error(400, "request body must be a JSON object")
        problem = body.get("problem")
        if not isinstance(problem, str) or not problem.strip():
            return error(400, "problem must be a non-empty string")
        overrides = body.get("session") or {}
        if not isinstance(overrides, dict):
            return error(400, "session settings must be an object")
        try:
            session_config = _session_config_from(config.session, overrides)
        except (TypeError, ValueError) as exc:
            return error(400, str(exc))
        if reg.live_count() >= config.capacity:
            return error(429, f"at capacity ({config.capacity} live sessions)")
        query = Query(
            id=str(body.get("id") or uuid.uuid4().hex[:8]),
            problem=problem,
            gold_answer=body.get("gold_answer"),
        )
        session = reg.create(query, session_config)
        return JSONResponse(
            status_code=201,
            content={
                "session_id": session.id,
                "query_id": query.id,
                "events_url": f"/v1/sessions/{session.id}/events",
                "max_turns": session_config.max_turns,
                "halt_policy": session_config.halt_policy,
            },
        )

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str) -> Response:
        reg.sweep()
        session = reg.get(session_id)
        if session is None:
            return error(404, "unknown session")
        return JSONResponse(content=session.snapshot())

    @app.post("/v1/sessions/{session_id}/decision")
    async def post_decision(session_id: str, request: Request) -> Response:
        session = reg.get(session_id)
        if session is None:
            return error(404, "unknown session")
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return error(400, "request body must be JSON")
        action = body.get("action") if isinstance(body, dict) else None
        if action not in ("continue", "halt"):
            return error(400, "action must be continue or halt")
        applied, reason = session.apply_decision(action)
        if not applied:
            return error(409, reason)
        return JSONResponse(content={"session_id": session.id, "action": action})

    @app.get("/v1/sessions/{session_id}/events")
    async def stream_events(session_id: str, request: Request,
                            last_event_id: int | None = None) -> Response:
        session = reg.get(session_id)
        if session is None:
            return error(404, "unknown session")
        header = request.headers.get("last-event-id")
        cursor = 0
        if last_event_id is not None:
            cursor = last_event_id + 1
        elif header is not None:
            try:
                cursor = int(header) + 1
            except ValueError:
                return error(400, "Last-Event-ID must be an integer")

        async def generate():
            nonlocal cursor
            while True:
                with session.cond:
                    batch = session.events[cursor:]
                    done = session.done
                for envelope in batch:
                    cursor += 1
                    yield _sse_frame(envelope)
                    if envelope["event"] in TERMINAL_EVENTS:
                        return
                if done:
                    return
                if await request.is_disconnected():
                    return
                await asyncio.sleep(_POLL_INTERVAL_S)

        return StreamingResponse(
            generate(),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "X-Accel-Buffering": "no"},
        )

    return app
