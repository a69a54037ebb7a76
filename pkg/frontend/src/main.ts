/** Flow controller: session id from the URL, one item on screen at a time.
 *
 * Rating an item optimistically advances the UI: controls lock, the rating
 * goes into the submit queue, and as soon as the service acknowledges it the
 * next item is fetched. Keyboard keys 1–5 mirror the buttons: no rating
 * outside the served scale is constructible here, and a locked card cannot be
 * rated twice.
 */

import { ApiError, RatingApi, type SessionSummary, type WireItem } from "./api.js";
import { SubmitQueue } from "./retry.js";
import {
  clearBanner,
  mountSkeleton,
  renderCompletion,
  renderErrorBanner,
  renderItem,
  renderProgress,
  renderReadOnlySummary,
  renderRetryBanner,
  renderSaving,
  setControlsEnabled,
  type ViewElements,
} from "./view.js";

export interface AppOptions {
  api: RatingApi;
  sessionId: string;
  /** Retry pacing, injectable for tests. */
  baseDelayMs?: number;
  maxDelayMs?: number;
}

export interface AppHandle {
  /** Resolves once the session shows its completion (or read-only) screen. */
  finished: Promise<void>;
  /** Rate the item currently on screen, exactly like clicking a button. */
  rate(value: number): void;
}

export function sessionIdFromUrl(href: string): string | null {
  const url = new URL(href);
  return url.searchParams.get("session");
}

export function startApp(root: HTMLElement, options: AppOptions): AppHandle {
  const views = mountSkeleton(root);
  const controller = new Controller(views, options);
  controller.begin();
  const onKeyDown = (event: KeyboardEvent) => {
    if (/^[0-9]$/.test(event.key)) controller.rateFromKey(Number(event.key));
  };
  window.addEventListener("keydown", onKeyDown);
  controller.finished.finally(() => window.removeEventListener("keydown", onKeyDown));
  return { finished: controller.finished, rate: (value) => controller.rate(value) };
}

class Controller {
  readonly finished: Promise<void>;
  private finish!: () => void;
  private current: WireItem | null = null;
  private accepting = false;
  private readonly submittedValues: number[] = [];
  private readonly queue: SubmitQueue;
  private sawOwnRating = false;

  constructor(
    private readonly views: ViewElements,
    private readonly options: AppOptions,
  ) {
    this.finished = new Promise((resolve) => {
      this.finish = resolve;
    });
    this.queue = new SubmitQueue(
      (rating) =>
        this.options.api
          .submitRating(this.options.sessionId, rating.itemId, rating.value)
          .then(() => undefined),
      {
        onPersisted: () => {
          clearBanner(this.views);
          void this.advance();
        },
        onRetry: (_rating, _error, attempt) =>
          renderRetryBanner(this.views, this.queue.pending, attempt),
        onRejected: (_rating, error) => {
          // Should be unconstructible from this UI; if the service still
          // rejects, say exactly what it said and move on to the next item.
          renderErrorBanner(this.views, error.code, error.message);
          void this.advance();
        },
      },
      this.options.baseDelayMs ?? 500,
      this.options.maxDelayMs ?? 5000,
    );
  }

  begin(): void {
    void this.advance();
  }

  rate(value: number): void {
    if (!this.accepting || this.current === null) return;
    const item = this.current;
    if (value < item.scale.min || value > item.scale.max || !Number.isInteger(value)) return;
    this.accepting = false;
    this.current = null;
    renderSaving(this.views);
    this.submittedValues.push(value);
    this.sawOwnRating = true;
    this.queue.enqueue({ itemId: item.item_id, value });
  }

  rateFromKey(value: number): void {
    this.rate(value);
  }

  private async advance(): Promise<void> {
    let result;
    try {
      result = await this.options.api.next(this.options.sessionId);
    } catch (error) {
      if (error instanceof ApiError && error.retryable) {
        renderRetryBanner(this.views, this.queue.pending, 1);
        setTimeout(() => void this.advance(), this.options.baseDelayMs ?? 500);
        return;
      }
      const apiError =
        error instanceof ApiError ? error : new ApiError("unknown_error", String(error), 0);
      renderErrorBanner(this.views, apiError.code, apiError.message);
      this.finish();
      return;
    }

    if (result.done) {
      const summary: SessionSummary = {
        session_id: result.session_id,
        rater_id: result.rater_id,
        rated: result.rated,
        total: result.total,
        status: result.status,
      };
      if (this.sawOwnRating) {
        renderCompletion(this.views, summary, this.submittedValues);
      } else {
        renderReadOnlySummary(this.views, summary);
      }
      this.finish();
      return;
    }

    renderProgress(this.views, result.progress);
    this.current = result.item;
    renderItem(this.views, result.item, (value) => this.rate(value));
    setControlsEnabled(this.views, true);
    this.accepting = true;
  }
}

/** Browser entry point; tests drive startApp directly instead. */
export function bootFromDocument(): void {
  const root = document.getElementById("app");
  if (!root) return;
  const sessionId = sessionIdFromUrl(window.location.href);
  if (!sessionId) {
    root.textContent = "Missing ?session=<session id> in the URL.";
    return;
  }
  // The page is served from <origin>/ui/, the API from <origin>/.
  const api = new RatingApi(window.location.origin);
  startApp(root, { api, sessionId });
}
