// Incremental SSE parsing over fetch streaming, with reconnect that
// resumes from the last seen event id so the transcript never gains
// duplicates or gaps.

export interface SseFrame {
  id: number | null;
  event: string | null;
  data: string;
}

export type StreamState = "live" | "reconnecting" | "stopped";

// Feed arbitrary chunk boundaries; frames are dispatched on blank
// lines per the SSE wire format. Comment lines (leading ":") such as
// heartbeats are dropped.
export class SseParser {
  private buf = "";
  private id: string | null = null;
  private event: string | null = null;
  private data: string[] = [];

  feed(chunk: string): SseFrame[] {
    this.buf += chunk;
    const frames: SseFrame[] = [];
    let nl: number;
    while ((nl = this.buf.indexOf("\n")) >= 0) {
      let line = this.buf.slice(0, nl);
      this.buf = this.buf.slice(nl + 1);
      if (line.endsWith("\r")) line = line.slice(0, -1);
      if (line === "") {
        const frame = this.flush();
        if (frame) frames.push(frame);
        continue;
      }
      if (line.startsWith(":")) continue;
      const colon = line.indexOf(":");
      const field = colon < 0 ? line : line.slice(0, colon);
      let value = colon < 0 ? "" : line.slice(colon + 1);
      if (value.startsWith(" ")) value = value.slice(1);
      if (field === "id") this.id = value;
      else if (field === "event") this.event = value;
      else if (field === "data") this.data.push(value);
    }
    return frames;
  }

  private flush(): SseFrame | null {
    if (this.id === null && this.event === null && this.data.length === 0) {
      return null;
    }
    const id = this.id !== null && /^\d+$/.test(this.id) ? Number(this.id) : null;
    const frame = { id, event: this.event, data: this.data.join("\n") };
    this.id = null;
    this.event = null;
    this.data = [];
    return frame;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface SubscribeOptions {
  base: string;
  since?: number;
  onEvent: (frame: SseFrame) => void;
  onState?: (state: StreamState) => void;
  fetchImpl?: FetchLike;
  retryDelayMs?: number;
}

export interface Subscription {
  stop(): void;
  lastSeq(): number;
}

export function subscribeEvents(opts: SubscribeOptions): Subscription {
  const fetchImpl: FetchLike =
    opts.fetchImpl ?? ((input, init) => globalThis.fetch(input, init));
  const retryDelayMs = opts.retryDelayMs ?? 1000;
  let last = opts.since ?? 0;
  let stopped = false;
  let controller: AbortController | null = null;

  async function pump(): Promise<void> {
    while (!stopped) {
      controller = new AbortController();
      try {
        const headers: Record<string, string> = {};
        if (last > 0) headers["Last-Event-ID"] = String(last);
        const res = await fetchImpl(`${opts.base}/api/events`, {
          headers,
          signal: controller.signal,
        });
        if (!res.ok || !res.body) throw new Error(`stream HTTP ${res.status}`);
        opts.onState?.("live");
        const reader = res.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SseParser();
        for (;;) {
          const { value, done } = await reader.read();
          if (done) break;
          for (const frame of parser.feed(decoder.decode(value, { stream: true }))) {
            if (frame.id !== null) last = frame.id;
            opts.onEvent(frame);
          }
        }
      } catch {
        // Connection faults fall through to the reconnect delay.
      }
      if (stopped) break;
      opts.onState?.("reconnecting");
      await new Promise((resolve) => setTimeout(resolve, retryDelayMs));
    }
    opts.onState?.("stopped");
  }

  void pump();
  return {
    stop() {
      stopped = true;
      controller?.abort();
    },
    lastSeq() {
      return last;
    },
  };
}
