/** DOM rendering. Everything shown comes from the wire item verbatim — the
 * wire view has no model identity, so the UI could not leak one if it tried.
 * Long responses scroll inside the card (CSS) so the rating buttons stay on
 * screen; a rater should never grade a tail they have not seen.
 */

import type { ChatTurn, ScaleDescriptor, SessionSummary, WireItem } from "./api.js";

export interface ViewElements {
  progress: HTMLElement;
  banner: HTMLElement;
  card: HTMLElement;
  controls: HTMLElement;
}

export function mountSkeleton(root: HTMLElement): ViewElements {
  root.textContent = "";
  const progress = el("div", "progress");
  const banner = el("div", "banner banner-hidden");
  const card = el("div", "card");
  const controls = el("div", "controls");
  root.append(progress, banner, card, controls);
  return { progress, banner, card, controls };
}

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function buttonLabel(value: number, scale: ScaleDescriptor): string {
  if (value === scale.min) return `${value} — ${scale.min_label}`;
  if (value === scale.max) return `${value} — ${scale.max_label}`;
  return String(value);
}

export function renderProgress(views: ViewElements, summary: SessionSummary): void {
  views.progress.textContent = `Rated ${summary.rated} of ${summary.total}`;
}

function renderHistory(turns: ChatTurn[]): HTMLElement {
  const thread = el("div", "history");
  for (const turn of turns) {
    const bubble = el("div", `turn turn-${turn.role}`);
    bubble.append(el("span", "turn-role", turn.role === "ai" ? "assistant" : turn.role));
    bubble.append(el("div", "turn-content", turn.content));
    thread.append(bubble);
  }
  return thread;
}

export function renderItem(
  views: ViewElements,
  item: WireItem,
  onRate: (value: number) => void,
): void {
  views.card.textContent = "";
  if (item.chat_history.length > 0) {
    views.card.append(renderHistory(item.chat_history));
  }
  const query = el("div", "query");
  query.append(el("span", "turn-role", "question"));
  query.append(el("div", "turn-content", item.query));
  views.card.append(query);

  const response = el("div", "response");
  response.append(el("span", "turn-role", "response to rate"));
  const body = el("div", "response-body", item.response);
  response.append(body);
  views.card.append(response);

  views.controls.textContent = "";
  const prompt = el("div", "scale-prompt", "How helpful is this response?");
  views.controls.append(prompt);
  const group = el("div", "buttons");
  for (let value = item.scale.min; value <= item.scale.max; value++) {
    const button = document.createElement("button");
    button.type = "button";
    button.className = "rate-button";
    button.dataset.value = String(value);
    button.textContent = buttonLabel(value, item.scale);
    button.addEventListener("click", () => onRate(value));
    group.append(button);
  }
  views.controls.append(group);
}

export function setControlsEnabled(views: ViewElements, enabled: boolean): void {
  for (const button of views.controls.querySelectorAll("button")) {
    (button as HTMLButtonElement).disabled = !enabled;
  }
}

export function renderSaving(views: ViewElements): void {
  setControlsEnabled(views, false);
  views.controls.querySelector(".scale-prompt")!.textContent = "Saving…";
}

export function renderCompletion(
  views: ViewElements,
  summary: SessionSummary,
  submittedValues: number[],
): void {
  views.card.textContent = "";
  views.controls.textContent = "";
  const done = el("div", "completion");
  done.append(el("h2", "completion-title", "Session complete"));
  done.append(el("p", "completion-count", `You rated ${summary.rated} responses.`));
  if (submittedValues.length > 0) {
    const mean =
      submittedValues.reduce((total, v) => total + v, 0) / submittedValues.length;
    done.append(el("p", "completion-mean", `Mean rating this session: ${mean.toFixed(2)}`));
  }
  done.append(el("p", "completion-thanks", "Thank you — your ratings are saved."));
  views.card.append(done);
  renderProgress(views, summary);
}

/** A session someone already finished: show its summary, offer no controls. */
export function renderReadOnlySummary(views: ViewElements, summary: SessionSummary): void {
  views.card.textContent = "";
  views.controls.textContent = "";
  const done = el("div", "completion");
  done.append(el("h2", "completion-title", "Session already complete"));
  done.append(
    el("p", "completion-count", `${summary.rated} of ${summary.total} responses were rated.`),
  );
  views.card.append(done);
  renderProgress(views, summary);
}

export function renderErrorBanner(views: ViewElements, code: string, message: string): void {
  views.banner.className = "banner banner-error";
  views.banner.textContent = ""; // the service's words, verbatim, plus its code
  views.banner.append(el("span", "banner-code", code));
  views.banner.append(el("span", "banner-message", message));
}

export function renderRetryBanner(views: ViewElements, pending: number, attempt: number): void {
  views.banner.className = "banner banner-retry";
  views.banner.textContent =
    `Connection trouble — retrying (attempt ${attempt}). ` +
    `${pending} rating${pending === 1 ? "" : "s"} waiting; nothing is lost.`;
}

export function clearBanner(views: ViewElements): void {
  views.banner.className = "banner banner-hidden";
  views.banner.textContent = "";
}
