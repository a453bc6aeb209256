/**
 * DOM wiring for the session page: one form, one live session view.
 *
 * Rendering is targeted rather than rebuild-the-world so that a think
 * section the user expanded stays expanded while deltas stream in. Turn
 * card elements are created once per turn and updated in place; think
 * text lives in a collapsed <details> block, answers are always visible.
 */

import { GatewayApi } from "./api.js";
import { streamEvents, type StreamHandle } from "./sse.js";
import { SessionStore, type TurnCard } from "./store.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function fmtMs(ms: number | null): string {
  if (ms === null) return "-";
  return ms >= 10_000 ? `${(ms / 1000).toFixed(1)} s` : `${Math.round(ms)} ms`;
}

class SessionPanel {
  private readonly api: GatewayApi;
  private readonly store: SessionStore;
  private stream: StreamHandle | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;
  private readonly cards = new Map<number, HTMLElement>();

  constructor(api: GatewayApi, sessionId: string, problem: string) {
    this.api = api;
    this.store = new SessionStore(sessionId, problem);
  }

  start(eventsUrl: string): void {
    el("session-section").hidden = false;
    el("turns").textContent = "";
    this.cards.clear();
    this.stream = streamEvents(
      eventsUrl,
      (envelope) => {
        this.store.apply(envelope);
        this.render();
      },
      {
        onStatus: (status, detail) => {
          this.store.setConnection(status, detail);
          this.render();
        },
      }
    );
    this.timer = setInterval(() => {
      this.store.tick();
      this.renderCounters();
      if (this.store.terminal && this.timer) {
        clearInterval(this.timer);
        this.timer = null;
      }
    }, 250);
    this.render();
  }

  stop(): void {
    this.stream?.close();
    if (this.timer) clearInterval(this.timer);
    this.timer = null;
  }

  private async decide(action: "continue" | "halt"): Promise<void> {
    this.store.markDecisionPending();
    this.render();
    try {
      const outcome = await this.api.postDecision(this.store.view.sessionId, action);
      this.store.resolveDecision(outcome);
    } catch (err) {
      this.store.resolveDecision({ ok: false, status: 0, detail: String(err) });
    }
    this.render();
  }

  private cardElement(card: TurnCard): HTMLElement {
    let node = this.cards.get(card.turn);
    if (node) return node;
    node = document.createElement("article");
    node.className = "turn-card";
    node.innerHTML = `
      <div class="turn-head">
        <span class="turn-no"></span>
        <span class="turn-meta"></span>
      </div>
      <details class="think">
        <summary>thinking</summary>
        <pre class="think-text"></pre>
      </details>
      <div class="answer"></div>`;
    this.cards.set(card.turn, node);
    el("turns").appendChild(node);
    return node;
  }

  private renderCard(card: TurnCard): void {
    const node = this.cardElement(card);
    (node.querySelector(".turn-no") as HTMLElement).textContent = `turn ${card.turn}`;
    const meta: string[] = [];
    if (card.completed) {
      meta.push(`${card.thinkTokens} think + ${card.answerTokens} answer tokens`);
      if (card.forcedClose) meta.push("think budget hit");
    }
    (node.querySelector(".turn-meta") as HTMLElement).textContent = meta.join(" · ");
    (node.querySelector(".think-text") as HTMLElement).textContent = card.think;
    (node.querySelector(".answer") as HTMLElement).textContent = card.answer;
  }

  private renderCounters(): void {
    const v = this.store.view;
    el("stat-tokens").textContent = String(v.outputTokens);
    el("stat-ttft").textContent = fmtMs(v.ttftMs);
    el("stat-elapsed").textContent = fmtMs(v.elapsedMs);
    el("stat-turns").textContent = String(v.turns.length);
  }

  private render(): void {
    const v = this.store.view;

    const badge = el("status-badge");
    badge.textContent = v.status;
    badge.dataset.status = v.status;

    const banner = el("conn-banner");
    banner.hidden = v.connection !== "retrying";
    if (!banner.hidden) {
      banner.textContent = "connection lost, retrying and resuming from the last event";
    }

    this.renderCounters();
    for (const card of v.turns) this.renderCard(card);

    // exactly one decision control pair lives in this fixed panel
    const panel = el("decision-panel");
    panel.hidden = !v.decision.awaiting && !v.decision.notice;
    const buttons = panel.querySelectorAll<HTMLButtonElement>("button");
    buttons.forEach((b) => {
      b.hidden = !v.decision.awaiting;
      b.disabled = v.decision.pending;
    });
    el("decision-label").textContent = v.decision.awaiting
      ? `turn ${v.decision.turn} finished, continue thinking or halt with the current answer?` +
        (v.decision.timeoutS !== null ? ` (auto-halts after ${v.decision.timeoutS} s)` : "")
      : "";
    el("decision-notice").textContent = v.decision.notice ?? "";

    const finalCard = el("final-card");
    finalCard.hidden = v.status !== "completed";
    if (!finalCard.hidden) {
      el("final-answer").textContent = v.finalAnswer ?? "";
      const s = v.finalStats;
      el("final-stats").textContent = s
        ? `halted by ${v.haltOrigin} · ${v.turns.length} turns · ${s.output_tokens} output tokens · ` +
          `TTFT ${fmtMs(s.ttft_ms)} · total ${fmtMs(s.total_ms)}`
        : "";
    }

    const errorCard = el("error-card");
    errorCard.hidden = v.status !== "failed";
    if (!errorCard.hidden) {
      el("error-text").textContent = v.error ?? "session failed";
      el("error-transcript").textContent = v.serverTranscript ?? this.store.transcript();
    }
  }

  wireDecisionButtons(): void {
    el("btn-continue").onclick = () => void this.decide("continue");
    el("btn-halt").onclick = () => void this.decide("halt");
  }
}

let activePanel: SessionPanel | null = null;

async function startSession(): Promise<void> {
  const base = (el<HTMLInputElement>("gateway-url").value || "").trim();
  const problem = el<HTMLTextAreaElement>("problem").value.trim();
  const status = el("form-status");
  if (!problem) {
    status.textContent = "enter a problem first";
    return;
  }
  status.textContent = "creating session...";
  const api = new GatewayApi(base);
  try {
    const created = await api.createSession({
      problem,
      session: {
        max_turns: Number(el<HTMLInputElement>("max-turns").value) || 8,
        halt_policy: el<HTMLSelectElement>("halt-policy").value,
      },
    });
    status.textContent = `session ${created.session_id}`;
    activePanel?.stop();
    activePanel = new SessionPanel(api, created.session_id, problem);
    activePanel.wireDecisionButtons();
    activePanel.start(`${api.baseUrl}${created.events_url}`);
  } catch (err) {
    status.textContent = String(err);
  }
}

el("start-form").addEventListener("submit", (event) => {
  event.preventDefault();
  void startSession();
});
