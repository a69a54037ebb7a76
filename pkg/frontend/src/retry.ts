/** In-flight submit queue: a rating the rater entered is never dropped.
 *
 * Ratings drain strictly in order, one request at a time. Transport failures
 * and 5xx responses are retried with capped exponential backoff until the
 * service accepts; a duplicate_rating conflict means an earlier attempt (or a
 * concurrent tab) already landed, so the rating is treated as persisted —
 * submit is idempotent per item. Any other rejection is surfaced to the
 * caller verbatim and stops the queue; nothing fails silently.
 *
 * There is deliberately no persistence beyond this queue: the service is the
 * source of truth for what was rated.
 */

import { ApiError } from "./api.js";

export interface QueuedRating {
  itemId: string;
  value: number;
}

export type SubmitOutcome = "persisted" | "already-rated";

export interface QueueEvents {
  /** One rating fully accepted by the service. */
  onPersisted: (rating: QueuedRating, outcome: SubmitOutcome) => void;
  /** A retryable failure; the queue will try again after the delay. */
  onRetry?: (rating: QueuedRating, error: ApiError, attempt: number, delayMs: number) => void;
  /** A non-retryable rejection; the rating is abandoned LOUDLY. */
  onRejected?: (rating: QueuedRating, error: ApiError) => void;
}

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class SubmitQueue {
  private readonly queue: QueuedRating[] = [];
  private readonly queuedItemIds = new Set<string>();
  private draining: Promise<void> = Promise.resolve();

  constructor(
    private readonly send: (rating: QueuedRating) => Promise<void>,
    private readonly events: QueueEvents,
    private readonly baseDelayMs = 500,
    private readonly maxDelayMs = 5000,
    private readonly sleepFn: (ms: number) => Promise<void> = sleep,
  ) {}

  /** Ratings not yet settled, counting the one in flight (it stays at the
   * head of the queue until the service answers). */
  get pending(): number {
    return this.queue.length;
  }

  /** Enqueue exactly once per item; a second enqueue of the same item is a
   * programming error upstream (the UI disables controls after rating). */
  enqueue(rating: QueuedRating): void {
    if (this.queuedItemIds.has(rating.itemId)) {
      throw new Error(`item ${rating.itemId} is already queued`);
    }
    this.queuedItemIds.add(rating.itemId);
    this.queue.push(rating);
    this.draining = this.draining.then(() => this.drain());
  }

  /** Resolves when everything currently queued has been settled. */
  async settled(): Promise<void> {
    await this.draining;
  }

  private async drain(): Promise<void> {
    while (this.queue.length > 0) {
      const rating = this.queue[0]!;
      let attempt = 0;
      for (;;) {
        try {
          await this.send(rating);
          this.events.onPersisted(rating, "persisted");
          break;
        } catch (error) {
          if (!(error instanceof ApiError)) throw error;
          if (error.status === 409) {
            this.events.onPersisted(rating, "already-rated");
            break;
          }
          if (!error.retryable) {
            this.events.onRejected?.(rating, error);
            break;
          }
          attempt += 1;
          const delayMs = Math.min(this.baseDelayMs * 2 ** (attempt - 1), this.maxDelayMs);
          this.events.onRetry?.(rating, error, attempt, delayMs);
          await this.sleepFn(delayMs);
        }
      }
      this.queue.shift();
      this.queuedItemIds.delete(rating.itemId);
    }
  }
}
