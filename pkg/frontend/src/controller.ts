import { ApiError, LabelingApi } from "./api.js";
import { FilterMode, Label, Stats, TriageItem } from "./types.js";

export interface SessionCounts {
  rider: number;
  non_rider: number;
  undone: number;
  committed: number;
  startedAt: number;
}

export interface Banner {
  kind: "info" | "error" | "retry";
  message: string;
  source?: "queue" | "commit";
}

export type Phase = "loading" | "ready" | "all_done";

export interface ViewState {
  phase: Phase;
  current: TriageItem | null;
  buffered: number;
  banner: Banner | null;
  session: SessionCounts;
  stats: Stats | null;
  filter: FilterMode;
  commitInFlight: boolean;
}

interface HistoryEntry {
  item: TriageItem;
  committed: Label;
  prior: Label | null;
}

export interface ControllerOptions {
  reviewer?: string;
  prefetch?: number;
  clock?: () => number; // epoch seconds
}

/** Keyboard-first triage session over the labeling service.
 *
 * Holds exactly one current item plus a prefetched buffer; commits are
 * optimistic (the next crop shows immediately) and roll back on failure.
 * While a commit is in flight further commit keys are ignored, so one
 * keystroke never produces more than one server mutation.
 */
export class TriageController {
  readonly reviewer: string;
  readonly prefetch: number;

  private readonly clock: () => number;
  private buffer: TriageItem[] = [];
  private current: TriageItem | null = null;
  private history: HistoryEntry[] = [];
  private banner: Banner | null = null;
  private phase: Phase = "loading";
  private stats: Stats | null = null;
  private filter: FilterMode = "unlabeled";
  private commitInFlight = false;
  private refillPromise: Promise<void> | null = null;
  private listeners: Array<(state: ViewState) => void> = [];
  private session: SessionCounts;

  constructor(private readonly api: LabelingApi, options: ControllerOptions = {}) {
    this.reviewer = options.reviewer ?? "anonymous";
    this.prefetch = options.prefetch ?? 10;
    this.clock = options.clock ?? (() => Date.now() / 1000);
    this.session = { rider: 0, non_rider: 0, undone: 0, committed: 0, startedAt: this.clock() };
  }

  onChange(listener: (state: ViewState) => void): void {
    this.listeners.push(listener);
  }

  state(): ViewState {
    return {
      phase: this.phase,
      current: this.current,
      buffered: this.buffer.length,
      banner: this.banner,
      session: { ...this.session },
      stats: this.stats,
      filter: this.filter,
      commitInFlight: this.commitInFlight,
    };
  }

  private emit(): void {
    const snapshot = this.state();
    for (const listener of this.listeners) {
      listener(snapshot);
    }
  }

  async start(): Promise<void> {
    await this.refreshStats().catch(() => undefined);
    await this.refill();
    if (this.current === null) {
      this.phase = "all_done";
      this.emit();
    }
  }

  async setFilter(filter: FilterMode): Promise<void> {
    this.filter = filter;
    this.buffer = [];
    this.current = null;
    this.phase = "loading";
    this.banner = null;
    this.emit();
    await this.refill();
    if (this.current === null) {
      this.phase = "all_done";
      this.emit();
    }
  }

  async refreshStats(): Promise<void> {
    this.stats = await this.api.stats();
    this.emit();
  }

  /** Top up the client-side buffer from the queue endpoint.

   * Concurrent callers share one in-flight request, so awaiting refill always
   * observes a completed fetch.
   */
  refill(): Promise<void> {
    if (this.refillPromise) {
      return this.refillPromise;
    }
    const wanted = this.prefetch - this.buffer.length - (this.current ? 1 : 0);
    if (wanted <= 0) {
      return Promise.resolve();
    }
    this.refillPromise = (async () => {
      try {
        const items = await this.api.queueNext(wanted, this.reviewer, this.filter);
        const known = new Set(this.buffer.map((item) => item.segment_id));
        if (this.current) {
          known.add(this.current.segment_id);
        }
        for (const item of items) {
          if (!known.has(item.segment_id)) {
            this.buffer.push(item);
          }
        }
        if (this.banner?.kind === "retry" && this.banner.source === "queue") {
          this.banner = null;
        }
        if (this.current === null && this.buffer.length > 0) {
          this.advance();
        }
      } catch (error) {
        this.banner = { kind: "retry", source: "queue",
                        message: `queue fetch failed: ${describe(error)} - retrying` };
      } finally {
        this.refillPromise = null;
      }
      this.emit();
    })();
    return this.refillPromise;
  }

  /** Promote the next buffered item to current; flips to all-done when empty. */
  private advance(): void {
    this.current = this.buffer.shift() ?? null;
    this.phase = this.current === null ? "all_done" : "ready";
    this.emit();
  }

  /** Keyboard entry point: r = rider, n = non_rider, u = undo. */
  async handleKey(key: string): Promise<void> {
    if (key === "r") {
      await this.commit("rider");
    } else if (key === "n") {
      await this.commit("non_rider");
    } else if (key === "u") {
      await this.undo();
    }
  }

  async commit(label: Label): Promise<void> {
    if (this.commitInFlight || this.current === null) {
      return; // dedup: one in-flight mutation at most
    }
    const item = this.current;

    if (item.lease_expires_at <= this.clock()) {
      // Someone else may hold this segment now; never commit over a dead lease.
      this.banner = { kind: "error", message: `lease expired for ${item.segment_id}; item requeued` };
      this.current = null;
      this.advance();
      void this.refill();
      return;
    }

    // Optimistic: show the next crop immediately, roll back on failure.
    this.commitInFlight = true;
    this.banner = null;
    this.session[label] += 1;
    this.session.committed += 1;
    this.advance();

    try {
      await this.api.postLabel({
        segment_id: item.segment_id,
        label,
        reviewer: this.reviewer,
        client_timestamp: new Date(this.clock() * 1000).toISOString(),
      });
      this.history.push({ item, committed: label, prior: item.current_label });
    } catch (error) {
      this.session[label] -= 1;
      this.session.committed -= 1;
      if (this.current) {
        this.buffer.unshift(this.current);
      }
      this.current = item;
      this.phase = "ready";
      this.banner =
        error instanceof ApiError
          ? { kind: "error", source: "commit",
              message: `commit rejected (${error.status}): ${error.message}` }
          : { kind: "retry", source: "commit",
              message: `network failure: ${describe(error)} - nothing lost, retry` };
    } finally {
      this.commitInFlight = false;
    }
    this.emit();
    void this.refill();
  }

  /** Undo the newest commit of this session.
   *
   * If the item carried a label before (review mode), a corrective commit
   * restores it. A first-time label cannot be reverted to "unlabeled", so the
   * item comes back as current and the next decision overrides it.
   */
  async undo(): Promise<void> {
    if (this.commitInFlight) {
      return;
    }
    const entry = this.history.pop();
    if (!entry) {
      this.banner = { kind: "info", message: "nothing to undo in this session" };
      this.emit();
      return;
    }
    this.session[entry.committed] -= 1;
    this.session.undone += 1;
    if (entry.prior !== null) {
      this.commitInFlight = true;
      try {
        await this.api.postLabel({
          segment_id: entry.item.segment_id,
          label: entry.prior,
          reviewer: this.reviewer,
        });
        this.banner = { kind: "info", message: `restored ${entry.item.segment_id} to ${entry.prior}` };
      } catch (error) {
        this.history.push(entry);
        this.session[entry.committed] += 1;
        this.session.undone -= 1;
        this.banner = { kind: "error", message: `undo failed: ${describe(error)}` };
      } finally {
        this.commitInFlight = false;
      }
    } else {
      if (this.current) {
        this.buffer.unshift(this.current);
      }
      this.current = entry.item;
      this.phase = "ready";
      this.banner = {
        kind: "info",
        message: `re-deciding ${entry.item.segment_id}: the next label overrides the stored one`,
      };
    }
    this.emit();
  }

  /** Decisions per minute over this session, for the stats panel. */
  throughputPerMinute(): number {
    const minutes = (this.clock() - this.session.startedAt) / 60;
    return minutes > 0 ? this.session.committed / minutes : 0;
  }
}

function describe(error: unknown): string {
  return error instanceof Error ? error.message : String(error);
}
