// DOM rendering. A full re-render from the model on every change
// keeps the view a pure function of state: the same event sequence
// always produces the same row order.

import { visibleRows } from "./model.js";
import type { Model, Row, RunSummary } from "./types.js";

export interface Handlers {
  onDraft(text: string): void;
  onSend(): void;
  onControl(command: string): void;
  onSelectRun(runId: string | null): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderRow(doc: Document, row: Row): HTMLElement {
  const cls = `row cls-${row.cls} tag-${row.tag}${row.malformed ? " malformed" : ""}`;
  const node = el(doc, "div", cls);
  node.dataset.seq = String(row.seq);
  if (row.runId) node.dataset.run = row.runId;
  const head = el(doc, "span", "label", row.label);
  node.appendChild(head);
  if (row.malformed) {
    node.appendChild(el(doc, "span", "badge warn", "unparsed"));
  }
  node.appendChild(el(doc, "div", "text", row.text));
  return node;
}

function renderRun(
  doc: Document,
  run: RunSummary,
  selected: string | null,
  handlers: Handlers,
): HTMLElement {
  const item = el(doc, "li", run.runId === selected ? "run selected" : "run");
  const button = el(doc, "button", "run-pick", run.runId);
  button.addEventListener("click", () => handlers.onSelectRun(run.runId));
  item.appendChild(button);
  item.appendChild(
    el(doc, "div", "run-task", run.task ?? "(task pending)"),
  );
  if (run.status) {
    item.appendChild(
      el(doc, "div", "run-status", `${run.status} (${run.stepsUsed ?? 0} steps)`),
    );
  }
  return item;
}

export function render(model: Model, handlers: Handlers, root: HTMLElement): void {
  const doc = root.ownerDocument;
  root.replaceChildren();

  const header = el(doc, "header");
  header.appendChild(el(doc, "h1", undefined, "openloop console"));
  header.appendChild(el(doc, "span", `badge conn-${model.connection}`, model.connection));
  if (model.state) {
    header.appendChild(el(doc, "span", "badge state", model.state));
  }
  root.appendChild(header);

  const main = el(doc, "main");

  const aside = el(doc, "aside");
  aside.appendChild(el(doc, "h2", undefined, "runs"));
  const runsList = el(doc, "ul", "runs");
  const all = el(doc, "li", model.selectedRun === null ? "run selected" : "run");
  const allButton = el(doc, "button", "run-pick", "all runs");
  allButton.addEventListener("click", () => handlers.onSelectRun(null));
  all.appendChild(allButton);
  runsList.appendChild(all);
  for (const run of model.runs) {
    runsList.appendChild(renderRun(doc, run, model.selectedRun, handlers));
  }
  aside.appendChild(runsList);

  aside.appendChild(el(doc, "h2", undefined, "memory"));
  const memoryList = el(doc, "ul", "memory");
  for (const record of model.memory) {
    memoryList.appendChild(
      el(doc, "li", `record kind-${record.kind}`, `[${record.kind}] ${record.task || "-"} → ${record.outcome}`),
    );
  }
  aside.appendChild(memoryList);
  main.appendChild(aside);

  const transcript = el(doc, "section", "transcript");
  for (const row of visibleRows(model)) {
    transcript.appendChild(renderRow(doc, row));
  }
  main.appendChild(transcript);
  root.appendChild(main);

  const controls = el(doc, "footer", "controls");
  const draft = el(doc, "textarea", "draft") as HTMLTextAreaElement;
  draft.placeholder = "feedback for the next run";
  draft.value = model.pendingFeedback;
  draft.addEventListener("input", () => handlers.onDraft(draft.value));
  controls.appendChild(draft);

  const send = el(doc, "button", "send", "send feedback") as HTMLButtonElement;
  send.disabled = model.pendingFeedback.trim() === "";
  send.addEventListener("click", () => handlers.onSend());
  controls.appendChild(send);

  if (model.queuedFeedback !== null) {
    controls.appendChild(el(doc, "span", "badge queued", "queued for next run"));
  }

  for (const command of ["pause", "resume", "step", "stop"]) {
    const button = el(doc, "button", `control control-${command}`, command);
    button.addEventListener("click", () => handlers.onControl(command));
    controls.appendChild(button);
  }

  if (model.notice) {
    controls.appendChild(el(doc, "div", "notice", model.notice));
  }
  root.appendChild(controls);
}
