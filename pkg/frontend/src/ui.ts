/** DOM layer: renders a SessionView and forwards events to the store.
 *
 * render() rebuilds the app subtree from the view alone — it holds no state
 * of its own, so whatever the store derives is exactly what appears.  Form
 * input values survive re-renders because the form elements are created once
 * and reparented, never recreated.
 */

import { SessionStore } from "./state.js";
import type { SessionView } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  for (const child of children) node.append(child);
  return node;
}

export class App {
  private readonly root: HTMLElement;
  private readonly store: SessionStore;

  // Long-lived inputs: reparented on render so typed text is never lost.
  private readonly fileInput: HTMLInputElement;
  private readonly instructionInput: HTMLInputElement;
  private readonly beamInput: HTMLTextAreaElement;

  constructor(root: HTMLElement, store: SessionStore) {
    this.root = root;
    this.store = store;
    this.fileInput = el("input", {
      type: "file",
      accept: "image/png,image/jpeg",
      "data-testid": "file-input",
    });
    this.instructionInput = el("input", {
      type: "text",
      placeholder: "put a red mug on the desk",
      "data-testid": "instruction-input",
    });
    this.beamInput = el("textarea", {
      rows: "3",
      placeholder: "one instruction per line",
      "data-testid": "beam-input",
    });
    store.subscribe((view) => this.render(view));
    this.render(store.view);
  }

  private async uploadSelected(): Promise<void> {
    const file = this.fileInput.files?.[0];
    if (!file) return;
    await this.store.createSession(file, file.name);
  }

  private async submitInstruction(replace = false): Promise<void> {
    await this.store.requestCandidates(this.instructionInput.value, 4, { replace });
  }

  private async submitBeam(): Promise<void> {
    const lines = this.beamInput.value
      .split("\n")
      .map((line) => line.trim())
      .filter((line) => line.length > 0);
    if (lines.length === 0) return;
    await this.store.runBeam(lines);
  }

  private render(view: SessionView): void {
    const sections: HTMLElement[] = [];
    sections.push(this.renderHeader(view));
    if (view.error) sections.push(this.renderError(view));
    if (view.phase === "empty") {
      sections.push(this.renderUpload(view));
    } else {
      sections.push(this.renderCanvas(view));
      sections.push(this.renderTimeline(view));
      sections.push(this.renderPending(view));
      sections.push(this.renderInstructionForm(view));
      sections.push(this.renderBeam(view));
    }
    this.root.replaceChildren(...sections);
  }

  private renderHeader(view: SessionView): HTMLElement {
    const status = view.busy ? "working…" : "ready";
    return el("header", {}, [
      el("h1", {}, ["insertkit"]),
      el("span", { "data-testid": "status", class: view.busy ? "busy" : "idle" }, [status]),
    ]);
  }

  private renderError(view: SessionView): HTMLElement {
    const error = view.error!;
    const actions: HTMLElement[] = [];
    if (error.offerReplace) {
      const replaceBtn = el("button", { "data-testid": "replace-pending" }, [
        "replace pending candidates",
      ]);
      replaceBtn.addEventListener("click", () => void this.store.retryLastStep({ replace: true }));
      if (view.busy) replaceBtn.disabled = true;
      actions.push(replaceBtn);
    } else if (error.retriable) {
      const retryBtn = el("button", { "data-testid": "retry" }, ["retry"]);
      retryBtn.addEventListener("click", () => void this.store.retryLastStep());
      if (view.busy) retryBtn.disabled = true;
      actions.push(retryBtn);
    }
    const dismissBtn = el("button", { "data-testid": "dismiss-error" }, ["dismiss"]);
    dismissBtn.addEventListener("click", () => this.store.clearError());
    actions.push(dismissBtn);
    return el("div", { class: "error-banner", "data-testid": "error-banner", role: "alert" }, [
      el("span", { "data-testid": "error-message" }, [error.message]),
      ...actions,
    ]);
  }

  private renderUpload(view: SessionView): HTMLElement {
    const button = el("button", { "data-testid": "upload" }, ["start session"]);
    button.disabled = view.busy;
    button.addEventListener("click", () => void this.uploadSelected());
    return el("section", { class: "upload" }, [
      el("h2", {}, ["background image"]),
      this.fileInput,
      button,
    ]);
  }

  private renderCanvas(view: SessionView): HTMLElement {
    const img = el("img", {
      src: this.store.mediaUrl(view.currentImageUrl!),
      alt: "current composition",
      "data-testid": "current-image",
    });
    return el("section", { class: "canvas" }, [el("h2", {}, ["current image"]), img]);
  }

  private renderTimeline(view: SessionView): HTMLElement {
    const items = view.steps.map((step) =>
      el("li", { "data-testid": "timeline-step" }, [
        el("span", { class: "instruction" }, [step.instruction]),
        el("span", { class: "score" }, [`score ${step.score.toFixed(6)}`]),
        el("span", { class: "seed" }, [`seed ${step.seed}`]),
        el("span", { class: "alts" }, [`${step.alternatives} alternatives`]),
      ]),
    );
    return el("section", { class: "timeline" }, [
      el("h2", {}, [`committed steps (${view.steps.length})`]),
      el("ol", { "data-testid": "timeline" }, items),
    ]);
  }

  private renderPending(view: SessionView): HTMLElement {
    if (view.candidates.length === 0) {
      return el("section", { class: "pending", "data-testid": "pending-empty" }, []);
    }
    const cards = view.candidates.map((candidate) => {
      const pick = el("button", { "data-testid": `pick-${candidate.id}` }, ["use this one"]);
      pick.disabled = !view.canSubmit;
      pick.addEventListener("click", () => void this.store.commit(candidate.id));
      return el("figure", { class: "candidate", "data-testid": "candidate" }, [
        el("img", { src: this.store.mediaUrl(candidate.imageUrl), alt: candidate.id }),
        el("figcaption", {}, [
          el("span", { class: "score", "data-testid": "candidate-score" }, [
            candidate.score.toFixed(6),
          ]),
          pick,
        ]),
      ]);
    });
    return el("section", { class: "pending", "data-testid": "pending" }, [
      el("h2", {}, [`candidates for “${view.pendingInstruction ?? ""}”`]),
      el("div", { class: "candidate-grid" }, cards),
    ]);
  }

  private renderInstructionForm(view: SessionView): HTMLElement {
    const submit = el("button", { "data-testid": "request-candidates" }, ["generate candidates"]);
    submit.disabled = !view.canSubmit;
    this.instructionInput.disabled = !view.canSubmit;
    submit.addEventListener("click", () => void this.submitInstruction());
    return el("section", { class: "instruction-form" }, [
      el("h2", {}, ["next instruction"]),
      this.instructionInput,
      submit,
    ]);
  }

  private renderBeam(view: SessionView): HTMLElement {
    const run = el("button", { "data-testid": "run-beam" }, ["run beam search"]);
    run.disabled = !view.canSubmit;
    this.beamInput.disabled = !view.canSubmit;
    run.addEventListener("click", () => void this.submitBeam());
    const status: (Node | string)[] = [];
    if (view.beamJob) {
      status.push(
        el("span", { "data-testid": "beam-status" }, [`beam job: ${view.beamJob.status}`]),
      );
      if (view.beamJob.traceUrl) {
        status.push(
          el(
            "a",
            {
              href: this.store.mediaUrl(view.beamJob.traceUrl),
              target: "_blank",
              "data-testid": "beam-trace-link",
            },
            ["open trace"],
          ),
        );
      }
      if (view.beamJob.error) {
        status.push(el("span", { class: "beam-error" }, [view.beamJob.error]));
      }
    }
    return el("section", { class: "beam" }, [
      el("h2", {}, ["multi-step beam search"]),
      this.beamInput,
      run,
      el("div", { class: "beam-status" }, status),
    ]);
  }
}
