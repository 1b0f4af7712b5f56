// Bootstrap: one event subscription drives the model; POSTs report
// inline status only, the rendered state follows server events.

import { postControl, postFeedback } from "./api.js";
import { applyEvent, initialModel } from "./model.js";
import { subscribeEvents } from "./sse.js";
import { render } from "./view.js";
import type { Model } from "./types.js";

const base = "";
let model = initialModel();
const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");

const handlers = {
  onDraft(text: string): void {
    model = { ...model, pendingFeedback: text };
    // No re-render on keystrokes; the textarea already holds the text.
  },
  onSend(): void {
    const text = model.pendingFeedback.trim();
    if (text === "") return;
    void postFeedback(base, text).then((result) => {
      update((m) =>
        result.ok
          ? { ...m, pendingFeedback: "", notice: null }
          : { ...m, notice: result.error ?? "feedback failed" },
      );
    });
  },
  onControl(command: string): void {
    void postControl(base, command).then((result) => {
      // State changes arrive through the event stream.
      if (!result.ok) {
        update((m) => ({ ...m, notice: result.error ?? "control failed" }));
      }
    });
  },
  onSelectRun(runId: string | null): void {
    update((m) => ({ ...m, selectedRun: runId }));
  },
};

function update(mutate: (m: Model) => Model): void {
  model = mutate(model);
  render(model, handlers, root as HTMLElement);
}

subscribeEvents({
  base,
  onEvent(frame) {
    let parsed: unknown;
    try {
      parsed = JSON.parse(frame.data);
    } catch {
      parsed = frame.data;
    }
    update((m) => applyEvent(m, parsed));
  },
  onState(state) {
    update((m) => ({ ...m, connection: state }));
  },
});

render(model, handlers, root as HTMLElement);
