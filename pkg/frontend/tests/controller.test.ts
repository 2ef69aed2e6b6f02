import { beforeEach, describe, expect, it } from "vitest";

import { ApiError, LabelingApi } from "../src/api.js";
import { TriageController } from "../src/controller.js";
import { FilterMode, Label, LabelDecision, LabelResponse, Stats, TriageItem } from "../src/types.js";

function item(id: string, overrides: Partial<TriageItem> = {}): TriageItem {
  return {
    segment_id: id,
    image_url: `/api/segments/${id}/image`,
    model_suggestion: null,
    current_label: null,
    context: { frame_id: `frame-${id}`, box: [1, 2, 3, 4] },
    lease_expires_at: FAR_FUTURE,
    ...overrides,
  };
}

const FAR_FUTURE = 4_000_000_000;

class FakeApi implements LabelingApi {
  pending: TriageItem[] = [];
  labels = new Map<string, Label>();
  posts: LabelDecision[] = [];
  queueCalls: Array<{ count: number; filter: FilterMode | undefined }> = [];
  failNextPost: Error | null = null;
  failNextQueue: Error | null = null;
  postGate: Promise<void> | null = null;

  async queueNext(count: number, _reviewer: string, filter?: FilterMode): Promise<TriageItem[]> {
    this.queueCalls.push({ count, filter });
    if (this.failNextQueue) {
      const error = this.failNextQueue;
      this.failNextQueue = null;
      throw error;
    }
    const unlabeled = this.pending.filter((i) => !this.labels.has(i.segment_id));
    return unlabeled.slice(0, count);
  }

  async postLabel(decision: LabelDecision): Promise<LabelResponse> {
    if (this.postGate) {
      await this.postGate;
    }
    if (this.failNextPost) {
      const error = this.failNextPost;
      this.failNextPost = null;
      throw error;
    }
    this.posts.push(decision);
    this.labels.set(decision.segment_id, decision.label);
    return {
      segment_id: decision.segment_id,
      label: decision.label,
      labeled_by: decision.reviewer,
      labeled_at: "now",
      counts: { pending: 0, rider: 0, non_rider: 0 },
    };
  }

  async stats(): Promise<Stats> {
    return {
      pending: this.pending.length - this.labels.size,
      labeled: { rider: 0, non_rider: 0 },
      per_reviewer: {},
      balance_ratio: 0,
      audit_entries: this.labels.size,
      total_segments: this.pending.length,
    };
  }

  imageUrl(i: TriageItem): string {
    return i.image_url;
  }
}

describe("TriageController", () => {
  let api: FakeApi;

  beforeEach(() => {
    api = new FakeApi();
  });

  it("prefetches up to its buffer size and shows the first item", async () => {
    api.pending = Array.from({ length: 15 }, (_, i) => item(`s${i}`));
    const controller = new TriageController(api, { prefetch: 10 });
    await controller.start();
    const state = controller.state();
    expect(state.phase).toBe("ready");
    expect(state.current?.segment_id).toBe("s0");
    expect(state.buffered).toBe(9); // ten fetched, one promoted to current
  });

  it("shows all-done on an empty queue and keeps working without suggestions", async () => {
    const controller = new TriageController(api);
    await controller.start();
    expect(controller.state().phase).toBe("all_done");
    expect(controller.state().current).toBeNull();
  });

  it("commits rider on r with exactly one mutation and advances optimistically", async () => {
    api.pending = [item("a"), item("b")];
    const controller = new TriageController(api);
    await controller.start();
    await controller.handleKey("r");
    expect(api.posts).toHaveLength(1);
    expect(api.posts[0]).toMatchObject({ segment_id: "a", label: "rider" });
    expect(controller.state().current?.segment_id).toBe("b");
    expect(controller.state().session.rider).toBe(1);
  });

  it("deduplicates rapid repeated keystrokes into a single mutation", async () => {
    api.pending = [item("a"), item("b")];
    const controller = new TriageController(api);
    await controller.start();
    let release!: () => void;
    api.postGate = new Promise((resolve) => (release = resolve));
    const first = controller.handleKey("r");
    const second = controller.handleKey("r"); // arrives while the first is in flight
    const third = controller.handleKey("n");
    release();
    await Promise.all([first, second, third]);
    expect(api.posts).toHaveLength(1);
    expect(api.posts[0].segment_id).toBe("a");
  });

  it("rolls back and requeues the item when the server rejects the commit", async () => {
    api.pending = [item("a"), item("b")];
    const controller = new TriageController(api);
    await controller.start();
    api.failNextPost = new ApiError("stale", 404);
    await controller.handleKey("r");
    const state = controller.state();
    expect(api.posts).toHaveLength(0);
    expect(state.current?.segment_id).toBe("a"); // restored, nothing lost
    expect(state.session.rider).toBe(0);
    expect(state.banner?.kind).toBe("error");
  });

  it("keeps the item and shows a retry banner on network failure", async () => {
    api.pending = [item("a")];
    const controller = new TriageController(api);
    await controller.start();
    api.failNextPost = new TypeError("fetch failed");
    await controller.handleKey("n");
    const state = controller.state();
    expect(state.current?.segment_id).toBe("a");
    expect(state.banner?.kind).toBe("retry");
    expect(api.posts).toHaveLength(0);
    // retry succeeds and moves on
    await controller.handleKey("n");
    expect(api.posts).toHaveLength(1);
  });

  it("refuses to commit over an expired lease and requeues the item", async () => {
    let now = 1000;
    api.pending = [item("a", { lease_expires_at: 1005 }), item("b")];
    const controller = new TriageController(api, { clock: () => now });
    await controller.start();
    now = 2000; // lease long dead
    await controller.handleKey("r");
    expect(api.posts).toHaveLength(0);
    const state = controller.state();
    expect(state.banner?.kind).toBe("error");
    expect(state.banner?.message).toContain("lease expired");
    expect(state.current?.segment_id).toBe("b");
  });

  it("undo of a first-time label re-presents the item without unlabeling", async () => {
    api.pending = [item("a"), item("b")];
    const controller = new TriageController(api);
    await controller.start();
    await controller.handleKey("r");
    expect(api.posts).toHaveLength(1);
    await controller.handleKey("u");
    const state = controller.state();
    expect(api.posts).toHaveLength(1); // no server call can restore "unlabeled"
    expect(state.current?.segment_id).toBe("a");
    expect(state.session.rider).toBe(0);
    expect(state.session.undone).toBe(1);
    // the next decision overrides the stored label
    await controller.handleKey("n");
    expect(api.posts).toHaveLength(2);
    expect(api.labels.get("a")).toBe("non_rider");
  });

  it("undo of a relabel issues a corrective commit restoring the prior label", async () => {
    api.pending = [item("a", { current_label: "non_rider" })];
    const controller = new TriageController(api);
    await controller.start();
    await controller.handleKey("r");
    expect(api.labels.get("a")).toBe("rider");
    await controller.handleKey("u");
    expect(api.posts).toHaveLength(2);
    expect(api.posts[1]).toMatchObject({ segment_id: "a", label: "non_rider" });
    expect(api.labels.get("a")).toBe("non_rider");
  });

  it("undo with no session history only informs", async () => {
    api.pending = [item("a")];
    const controller = new TriageController(api);
    await controller.start();
    await controller.handleKey("u");
    expect(controller.state().banner?.message).toContain("nothing to undo");
    expect(api.posts).toHaveLength(0);
  });

  it("refills the buffer as commits drain it", async () => {
    api.pending = Array.from({ length: 8 }, (_, i) => item(`s${i}`));
    const controller = new TriageController(api, { prefetch: 3 });
    await controller.start();
    for (const key of ["r", "n", "r", "n"]) {
      await controller.handleKey(key);
      await controller.refill();
    }
    expect(api.posts).toHaveLength(4);
    expect(controller.state().current?.segment_id).toBe("s4");
  });

  it("switching filters clears the buffer and queries with the new mode", async () => {
    api.pending = [item("a")];
    const controller = new TriageController(api);
    await controller.start();
    await controller.setFilter("disagreement");
    const last = api.queueCalls[api.queueCalls.length - 1];
    expect(last.filter).toBe("disagreement");
    expect(controller.state().filter).toBe("disagreement");
  });

  it("queue fetch failure surfaces a retry banner and recovers", async () => {
    api.pending = [item("a")];
    api.failNextQueue = new TypeError("fetch failed");
    const controller = new TriageController(api);
    await controller.start();
    expect(controller.state().banner?.kind).toBe("retry");
    await controller.refill();
    expect(controller.state().banner).toBeNull();
    expect(controller.state().current?.segment_id).toBe("a");
  });

  it("tracks throughput from the injected clock", async () => {
    let now = 0;
    api.pending = [item("a"), item("b")];
    const controller = new TriageController(api, { clock: () => now });
    await controller.start();
    now = 30;
    await controller.handleKey("r");
    now = 60;
    await controller.handleKey("n");
    expect(controller.throughputPerMinute()).toBeCloseTo(2, 5);
  });

  it("reports suggestion metadata through state for the badge", async () => {
    api.pending = [item("a", { model_suggestion: 0.93 })];
    const controller = new TriageController(api);
    await controller.start();
    expect(controller.state().current?.model_suggestion).toBe(0.93);
  });
});
