// Wire types mirroring the service API, plus the view model.

export interface LoopEvent {
  seq: number;
  kind: string;
  run_id: string | null;
  payload: Record<string, unknown>;
  ts: string;
}

export interface TranscriptMessage {
  role: string;
  content: string;
  step_tag?: string | null;
  seq?: number;
}

export interface MemoryRecord {
  run_id: string;
  kind: string;
  task: string;
  action: string;
  outcome: string;
  artifacts?: string[];
  ts?: string;
}

export interface RunSummary {
  runId: string;
  index: number | null;
  task: string | null;
  origin: string | null;
  status: string | null;
  stepsUsed: number | null;
  outcome: string | null;
}

export type Connection = "live" | "reconnecting" | "stopped";

// One rendered transcript line. cls picks the row family, tag drives
// the per-step color coding.
export interface Row {
  seq: number;
  runId: string | null;
  cls: "message" | "meta" | "error";
  tag: string;
  label: string;
  text: string;
  malformed?: boolean;
}

export interface Model {
  lastSeq: number;
  connection: Connection;
  state: string | null;
  runs: RunSummary[]; // newest first
  selectedRun: string | null; // null = all runs
  rows: Row[]; // seq order
  memory: MemoryRecord[]; // newest first
  pendingFeedback: string;
  queuedFeedback: string | null;
  notice: string | null;
}
