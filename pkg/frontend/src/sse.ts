/**
 * SSE client for the gateway's event stream.
 *
 * Plain fetch + ReadableStream so the same code runs in the browser and
 * under node. Reconnects automatically after a dropped connection and
 * resumes from the last seen sequence number via the Last-Event-ID
 * header, so no event is ever delivered from an earlier point than the
 * caller has already seen (the store still dedups by seq as a backstop).
 *
 * The stream finishes for good when a terminal event arrives
 * (session_completed / session_failed), when the server answers with a
 * non-retryable status, or when the caller closes the handle.
 */

import type { Envelope } from "./types.js";

export const TERMINAL_EVENTS = ["session_completed", "session_failed"];

export type ConnectionStatus = "open" | "retrying" | "closed";

export interface StreamOptions {
  // resume point: highest seq already applied, -1 for a fresh stream
  lastEventId?: number;
  retryDelayMs?: number;
  maxAttempts?: number;
  fetchImpl?: typeof fetch;
  onStatus?: (status: ConnectionStatus, detail?: string) => void;
}

export interface StreamHandle {
  close(): void;
  // resolves when the stream is finished (terminal event, permanent
  // error, or close()); rejects only on programming errors
  done: Promise<void>;
}

interface ParsedFrame {
  id: string | null;
  event: string;
  data: string | null;
}

function parseFrame(frame: string): ParsedFrame {
  let id: string | null = null;
  let event = "message";
  const dataLines: string[] = [];
  for (const rawLine of frame.split(/\r?\n/)) {
    if (rawLine.startsWith("id:")) {
      id = rawLine.slice(3).trim();
    } else if (rawLine.startsWith("event:")) {
      event = rawLine.slice(6).trim();
    } else if (rawLine.startsWith("data:")) {
      dataLines.push(rawLine.slice(5).trim());
    }
    // comment lines (":keepalive") and anything else are ignored
  }
  return { id, event, data: dataLines.length ? dataLines.join("\n") : null };
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export function streamEvents(
  url: string,
  onEnvelope: (env: Envelope) => void,
  options: StreamOptions = {}
): StreamHandle {
  const fetchImpl = options.fetchImpl ?? fetch;
  const retryDelayMs = options.retryDelayMs ?? 250;
  const maxAttempts = options.maxAttempts ?? 20;
  const onStatus = options.onStatus ?? (() => {});

  let lastId = options.lastEventId ?? -1;
  let closed = false;
  const aborter = { current: null as AbortController | null };

  async function readConnection(): Promise<"terminal" | "ended"> {
    const controller = new AbortController();
    aborter.current = controller;
    const headers: Record<string, string> = { Accept: "text/event-stream" };
    if (lastId >= 0) {
      headers["Last-Event-ID"] = String(lastId);
    }
    const response = await fetchImpl(url, { headers, signal: controller.signal });
    if (!response.ok) {
      const err = new Error(`HTTP ${response.status}`) as Error & { status: number };
      err.status = response.status;
      throw err;
    }
    if (!response.body) {
      throw new Error("response has no body");
    }
    onStatus("open");

    const reader = response.body.getReader();
    const decoder = new TextDecoder("utf-8");
    let buffer = "";
    try {
      while (true) {
        const { value, done } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        const frames = buffer.split(/\r?\n\r?\n/);
        buffer = frames.pop() ?? "";
        for (const frame of frames) {
          const parsed = parseFrame(frame);
          if (parsed.data === null) continue;
          let envelope: Envelope;
          try {
            envelope = JSON.parse(parsed.data) as Envelope;
          } catch (err) {
            console.warn("skipping unparseable SSE data:", parsed.data);
            continue;
          }
          if (typeof envelope.seq === "number") {
            lastId = Math.max(lastId, envelope.seq);
          }
          onEnvelope(envelope);
          if (TERMINAL_EVENTS.includes(envelope.event)) {
            return "terminal";
          }
        }
      }
    } finally {
      try {
        await reader.cancel();
      } catch {
        // already closed
      }
    }
    return "ended";
  }

  async function run(): Promise<void> {
    let attempts = 0;
    while (!closed) {
      try {
        const outcome = await readConnection();
        if (outcome === "terminal") {
          onStatus("closed");
          return;
        }
        // stream ended cleanly without a terminal event: the session is
        // done replaying (server saw `done`) or the connection dropped.
        // A resume costs one cheap request either way.
      } catch (err) {
        if (closed) break;
        const status = (err as { status?: number }).status;
        if (status !== undefined && status >= 400 && status < 500) {
          // session gone or bad request: retrying will not help
          onStatus("closed", `HTTP ${status}`);
          return;
        }
      }
      if (closed) break;
      attempts += 1;
      if (attempts > maxAttempts) {
        onStatus("closed", "gave up reconnecting");
        return;
      }
      onStatus("retrying");
      await sleep(retryDelayMs);
    }
    onStatus("closed");
  }

  const done = run();
  return {
    close() {
      closed = true;
      aborter.current?.abort();
    },
    done,
  };
}
