// Pure event reducer. The same event sequence always yields the same
// model, so the transcript renders deterministically and tests can
// replay recorded fixtures.

import type {
  LoopEvent,
  MemoryRecord,
  Model,
  Row,
  RunSummary,
  TranscriptMessage,
} from "./types.js";

export function initialModel(): Model {
  return {
    lastSeq: 0,
    connection: "reconnecting",
    state: null,
    runs: [],
    selectedRun: null,
    rows: [],
    memory: [],
    pendingFeedback: "",
    queuedFeedback: null,
    notice: null,
  };
}

function isEvent(raw: unknown): raw is LoopEvent {
  if (typeof raw !== "object" || raw === null) return false;
  const e = raw as Record<string, unknown>;
  return (
    typeof e.seq === "number" &&
    Number.isFinite(e.seq) &&
    typeof e.kind === "string" &&
    typeof e.payload === "object" &&
    e.payload !== null &&
    (e.run_id === null || typeof e.run_id === "string")
  );
}

function isMessage(raw: unknown): raw is TranscriptMessage {
  if (typeof raw !== "object" || raw === null) return false;
  const m = raw as Record<string, unknown>;
  return typeof m.role === "string" && typeof m.content === "string";
}

function safeText(raw: unknown): string {
  try {
    return JSON.stringify(raw);
  } catch {
    return String(raw);
  }
}

function rawRow(seq: number, runId: string | null, raw: unknown): Row {
  return {
    seq,
    runId,
    cls: "error",
    tag: "malformed",
    label: "unparsed",
    text: safeText(raw),
    malformed: true,
  };
}

function updateRun(
  runs: RunSummary[],
  runId: string,
  patch: Partial<RunSummary>,
): RunSummary[] {
  return runs.map((r) => (r.runId === runId ? { ...r, ...patch } : r));
}

function str(value: unknown): string {
  return typeof value === "string" ? value : safeText(value);
}

// Applies one raw event (already JSON-decoded). A payload that fails
// validation still renders as a raw row with a warning badge and the
// stream continues; a duplicate seq (reconnect overlap) is a no-op.
export function applyEvent(model: Model, raw: unknown): Model {
  if (!isEvent(raw)) {
    return { ...model, rows: [...model.rows, rawRow(model.lastSeq, null, raw)] };
  }
  if (raw.seq <= model.lastSeq) return model;

  const next: Model = { ...model, lastSeq: raw.seq, rows: [...model.rows] };
  const p = raw.payload;
  const runId = raw.run_id;

  switch (raw.kind) {
    case "run_started": {
      const index = typeof p.index === "number" ? p.index : null;
      if (runId !== null) {
        next.runs = [
          {
            runId,
            index,
            task: null,
            origin: null,
            status: null,
            stepsUsed: null,
            outcome: null,
          },
          ...next.runs,
        ];
      }
      next.rows.push({
        seq: raw.seq,
        runId,
        cls: "meta",
        tag: raw.kind,
        label: "run",
        text: `run ${runId} started`,
      });
      return next;
    }
    case "task_generated": {
      const task = str(p.task);
      const origin = str(p.origin);
      const repeat =
        typeof p.duplicate_of === "string" ? ` (repeat of ${p.duplicate_of})` : "";
      if (runId !== null) {
        next.runs = updateRun(next.runs, runId, { task, origin });
      }
      next.rows.push({
        seq: raw.seq,
        runId,
        cls: "meta",
        tag: raw.kind,
        label: "task",
        text: `task [${origin}]${repeat}: ${task}`,
      });
      return next;
    }
    case "message_appended":
    case "observation": {
      if (!isMessage(p.message)) {
        next.rows.push(rawRow(raw.seq, runId, raw));
        return next;
      }
      const message = p.message;
      const tag = message.step_tag ?? message.role;
      next.rows.push({
        seq: raw.seq,
        runId,
        cls: "message",
        tag,
        label: message.step_tag
          ? `${message.role} · ${message.step_tag}`
          : message.role,
        text: message.content,
      });
      if (message.step_tag === "feedback") {
        // Delivery marks the queued feedback as consumed.
        next.queuedFeedback = null;
      }
      return next;
    }
    case "run_completed": {
      const status = str(p.status);
      const steps = typeof p.steps_used === "number" ? p.steps_used : 0;
      const record = p.record;
      let outcome = "";
      if (typeof record === "object" && record !== null) {
        const r = record as Record<string, unknown>;
        outcome = str(r.outcome ?? "");
        next.memory = [r as unknown as MemoryRecord, ...next.memory];
        if (runId !== null) {
          next.runs = updateRun(next.runs, runId, {
            status,
            stepsUsed: steps,
            outcome,
          });
        }
      }
      next.rows.push({
        seq: raw.seq,
        runId,
        cls: "meta",
        tag: raw.kind,
        label: "run",
        text: `run ${runId} ${status} after ${steps} steps: ${outcome}`,
      });
      return next;
    }
    case "error": {
      next.rows.push({
        seq: raw.seq,
        runId,
        cls: "error",
        tag: raw.kind,
        label: "error",
        text: `run ${runId} failed: ${str(p.error)}`,
      });
      return next;
    }
    case "awaiting_input": {
      next.state = "paused";
      next.rows.push({
        seq: raw.seq,
        runId,
        cls: "meta",
        tag: raw.kind,
        label: "control",
        text: "loop paused; awaiting operator",
      });
      return next;
    }
    case "feedback_received": {
      const text = str(p.text);
      next.queuedFeedback = text;
      next.memory = [
        { run_id: "", kind: "feedback", task: "", action: "", outcome: text },
        ...next.memory,
      ];
      next.rows.push({
        seq: raw.seq,
        runId,
        cls: "meta",
        tag: raw.kind,
        label: "feedback",
        text: `feedback queued: ${text}`,
      });
      return next;
    }
    case "state_changed": {
      const state = str(p.state);
      next.state = state;
      next.rows.push({
        seq: raw.seq,
        runId,
        cls: "meta",
        tag: raw.kind,
        label: "control",
        text: `state: ${state} (${str(p.command)})`,
      });
      return next;
    }
    case "loop_finished": {
      next.state = "finished";
      next.rows.push({
        seq: raw.seq,
        runId,
        cls: "meta",
        tag: raw.kind,
        label: "loop",
        text:
          `loop finished: ${str(p.runs_attempted)} attempted, ` +
          `${str(p.runs_completed)} completed, ${str(p.errors)} errors`,
      });
      return next;
    }
    default: {
      // Unknown kind from a newer server: keep the stream usable.
      next.rows.push(rawRow(raw.seq, runId, raw));
      return next;
    }
  }
}

export function applyEvents(model: Model, events: unknown[]): Model {
  let current = model;
  for (const event of events) current = applyEvent(current, event);
  return current;
}

export function visibleRows(model: Model): Row[] {
  if (model.selectedRun === null) return model.rows;
  return model.rows.filter((r) => r.runId === model.selectedRun);
}
