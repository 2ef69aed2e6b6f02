// Scripted sessions against the real labeling service (spawned as a child
// process). Covers the release criterion: 20 keyboard labels land in the
// store with a full audit trail, leases exclude concurrent sessions, and a
// reloaded UI sees exactly the server state.

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { TriageController } from "../src/controller.js";
import { Label } from "../src/types.js";

const PYTHON = process.env.PYTHON ?? "python3";

const SEED_STORE = `
import sys
import numpy as np
from rider_scope.dataset import SegmentRecord, SegmentStore
from rider_scope.geometry import BoundingBox
from rider_scope.imaging import save_png

root, count = sys.argv[1], int(sys.argv[2])
store = SegmentStore(root)
rng = np.random.default_rng(0)
for i in range(count):
    segment_id = f"s{i:03d}"
    crop_rel = f"crops/{segment_id}.png"
    save_png(rng.integers(0, 256, (40, 30, 3), dtype=np.uint8), store.root / crop_rel)
    store.add_segment(SegmentRecord(
        segment_id=segment_id, source_frame_id=f"f{i}", interaction_id=f"i{i % 4}",
        box=BoundingBox(5, 5, 10, 20), extended_box=BoundingBox(0, 5, 30, 25),
        frame_size=(320, 240), crop_path=crop_rel,
    ))
print(len(store))
`;

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address && typeof address === "object") {
        const port = address.port;
        probe.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

async function waitForHealth(base: string, timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${base}/api/health`);
      if (response.ok) {
        return;
      }
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 100));
  }
  throw new Error(`service at ${base} never became healthy`);
}

interface Service {
  base: string;
  storeDir: string;
  child: ChildProcess;
}

async function startService(segments: number, extraArgs: string[] = []): Promise<Service> {
  const storeDir = mkdtempSync(join(tmpdir(), "triage-store-"));
  execFileSync(PYTHON, ["-c", SEED_STORE, storeDir, String(segments)]);
  const port = await freePort();
  const child = spawn(
    PYTHON,
    ["-m", "rider_scope.cli", "serve", "--store", storeDir, "--port", String(port), ...extraArgs],
    { stdio: "ignore" },
  );
  const base = `http://127.0.0.1:${port}`;
  await waitForHealth(base);
  return { base, storeDir, child };
}

function stopService(service: Service): void {
  service.child.kill("SIGTERM");
  rmSync(service.storeDir, { recursive: true, force: true });
}

function auditEntries(storeDir: string): Array<{ segment_id: string; label: Label; labeled_by: string }> {
  const text = readFileSync(join(storeDir, "audit.jsonl"), "utf-8");
  return text
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line));
}

describe("triage loop against the live service", () => {
  describe("scripted 20-label session", () => {
    let service: Service;

    beforeAll(async () => {
      service = await startService(20);
    }, 40_000);

    afterAll(() => stopService(service));

    it("labels 20 crops via keyboard and the store audit matches exactly", async () => {
      const api = new ApiClient(service.base);
      const controller = new TriageController(api, { reviewer: "scripted", prefetch: 10 });
      await controller.start();

      const committed = new Map<string, Label>();
      while (controller.state().current !== null) {
        const current = controller.state().current!;
        const key = parseInt(current.segment_id.slice(1), 10) % 2 === 0 ? "r" : "n";
        committed.set(current.segment_id, key === "r" ? "rider" : "non_rider");
        await controller.handleKey(key);
        await controller.refill();
      }

      expect(committed.size).toBe(20);
      expect(controller.state().phase).toBe("all_done");
      expect(controller.state().session.committed).toBe(20);

      const entries = auditEntries(service.storeDir);
      expect(entries).toHaveLength(20);
      for (const entry of entries) {
        expect(entry.label).toBe(committed.get(entry.segment_id));
        expect(entry.labeled_by).toBe("scripted");
      }

      const stats = await api.stats();
      expect(stats.audit_entries).toBe(20);
      expect(stats.pending).toBe(0);
      expect(stats.labeled.rider + stats.labeled.non_rider).toBe(20);
    }, 40_000);

    it("a reloaded session sees exactly the server state", async () => {
      const api = new ApiClient(service.base);
      const reloaded = new TriageController(api, { reviewer: "after-reload" });
      await reloaded.start();
      expect(reloaded.state().phase).toBe("all_done");
      const stats = reloaded.state().stats!;
      const serverStats = await api.stats();
      expect(stats).toEqual(serverStats);
    }, 20_000);
  });

  describe("two concurrent sessions", () => {
    let service: Service;

    beforeAll(async () => {
      service = await startService(12);
    }, 40_000);

    afterAll(() => stopService(service));

    it("leases keep the sessions' items disjoint", async () => {
      // Each session prefetches 6 of the 12 segments, so every segment is
      // leased to exactly one reviewer before any labeling happens.
      const alice = new TriageController(new ApiClient(service.base), { reviewer: "alice", prefetch: 6 });
      const bob = new TriageController(new ApiClient(service.base), { reviewer: "bob", prefetch: 6 });
      await alice.start();
      await bob.start();

      const drain = async (controller: TriageController) => {
        const ids = new Set<string>();
        while (controller.state().current) {
          const current = controller.state().current!;
          ids.add(current.segment_id);
          await controller.commit(
            parseInt(current.segment_id.slice(1), 10) % 2 ? "rider" : "non_rider",
          );
        }
        return ids;
      };
      const aliceIds = await drain(alice);
      const bobIds = await drain(bob);
      for (const id of aliceIds) {
        expect(bobIds.has(id)).toBe(false);
      }
      expect(aliceIds.size).toBe(6);
      expect(bobIds.size).toBe(6);
      expect(auditEntries(service.storeDir)).toHaveLength(12);
    }, 40_000);
  });

  describe("stale lease handling", () => {
    let service: Service;

    beforeAll(async () => {
      service = await startService(2, ["--lease-seconds", "0.3"]);
    }, 40_000);

    afterAll(() => stopService(service));

    it("commits over an expired lease fail visibly and the item requeues", async () => {
      const api = new ApiClient(service.base);
      const controller = new TriageController(api, { reviewer: "slowpoke", prefetch: 1 });
      await controller.start();
      const first = controller.state().current!;
      await new Promise((resolve) => setTimeout(resolve, 400)); // outlive the lease
      await controller.handleKey("r");
      const state = controller.state();
      expect(state.banner?.kind).toBe("error");
      expect(state.banner?.message).toContain("lease expired");

      // The item is back in the queue: a fresh fetch re-leases it.
      await controller.refill();
      const again = controller.state().current;
      expect(again).not.toBeNull();
      await controller.handleKey("r");
      const entries = auditEntries(service.storeDir);
      expect(entries.some((entry) => entry.segment_id === first.segment_id)).toBe(true);
    }, 40_000);
  });
});
