import type { Envelope } from "../src/types.js";

export function mkEnv(
  seq: number,
  event: string,
  data: Record<string, unknown>,
  sessionId = "s1"
): Envelope {
  return { seq, event, data, session_id: sessionId };
}

export async function waitFor(
  predicate: () => boolean,
  timeoutMs = 10_000,
  label = "condition"
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!predicate()) {
    if (Date.now() > deadline) {
      throw new Error(`timed out waiting for ${label}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 20));
  }
}

/** Serialize one envelope the way the gateway frames it. */
export function sseFrame(env: Envelope): string {
  return `id: ${env.seq}\nevent: ${env.event}\ndata: ${JSON.stringify(env)}\n\n`;
}
