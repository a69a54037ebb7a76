/** Round trip against the real rating service.
 *
 * Boots the Python service on a scratch data directory with a 3-model x
 * 5-sample pool, creates a session over HTTP, and drives all fifteen ratings
 * through the built UI in a real DOM. Midway the service process is killed
 * and restarted on the same data directory: the in-flight rating must survive
 * the outage and land exactly once. Every byte the rater-facing client saw is
 * scanned afterwards for model identities; the export endpoint (de-anonymized
 * by design, never shown to raters) is then checked against hand-computed
 * per-model means.
 */

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { once } from "node:events";
import fs from "node:fs";
import http from "node:http";
import net from "node:net";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { RatingApi, type FetchLike } from "../src/api.js";
import { startApp } from "../src/main.js";

const FRONTEND_ROOT = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..");
const DIST = path.join(FRONTEND_ROOT, "dist");

const MODELS = ["anchor-teacher", "student-alpha", "student-beta"] as const;
const VOICES: Record<(typeof MODELS)[number], string> = {
  "anchor-teacher": "a detailed",
  "student-alpha": "a terse",
  "student-beta": "a hedged",
};
// Planned rating per model and trip index; the UI recovers the row from the
// displayed response text alone, never from metadata.
const PLAN: Record<(typeof MODELS)[number], number[]> = {
  "anchor-teacher": [5, 5, 4, 5, 4], // mean 4.6
  "student-alpha": [3, 3, 4, 3, 2], // mean 3.0
  "student-beta": [2, 1, 2, 1, 2], // mean 1.6
};
const EXPECTED_MEANS = { "anchor-teacher": 4.6, "student-alpha": 3.0, "student-beta": 1.6 };
const SAMPLES = [1, 2, 3, 4, 5].map((i) => `quora-00${i}`);

/** Plain HTTP fetch on node:http — independent of the DOM test environment,
 * with pooling off so a server restart cannot strand sockets. */
const nodeFetch: FetchLike = (url, init) =>
  new Promise((resolve, reject) => {
    const request = http.request(
      url,
      {
        method: init?.method ?? "GET",
        headers: (init?.headers as Record<string, string>) ?? {},
        agent: false,
      },
      (res) => {
        const chunks: Buffer[] = [];
        res.on("data", (chunk: Buffer) => chunks.push(chunk));
        res.on("end", () => {
          resolve(
            new Response(Buffer.concat(chunks).toString("utf8"), { status: res.statusCode! }),
          );
        });
      },
    );
    request.on("error", reject);
    if (init?.body) request.write(init.body);
    request.end();
  });

async function getFreePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = net.createServer();
    server.on("error", reject);
    server.listen(0, "127.0.0.1", () => {
      const port = (server.address() as net.AddressInfo).port;
      server.close(() => resolve(port));
    });
  });
}

async function until(check: () => boolean, what: string, timeoutMs = 15_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (check()) return;
    await new Promise((resolve) => setTimeout(resolve, 10));
  }
  throw new Error(`timed out waiting for ${what}`);
}

interface Exchange {
  url: string;
  requestBody: string;
  responseBody: string;
}

class Harness {
  dataDir!: string;
  port!: number;
  base!: string;
  child: ChildProcess | null = null;
  serverLog = "";
  /** Everything the rater-facing client sent or received. */
  readonly exchanges: Exchange[] = [];

  readonly recordingFetch: FetchLike = async (url, init) => {
    const response = await nodeFetch(url, init);
    const body = await response.text();
    this.exchanges.push({ url, requestBody: String(init?.body ?? ""), responseBody: body });
    return new Response(body, { status: response.status });
  };

  async start(): Promise<void> {
    this.child = spawn(
      "python3",
      [
        "-m",
        "distillpipe.cli",
        "rate",
        "serve",
        "--data-dir",
        this.dataDir,
        "--ui-dir",
        DIST,
        "--host",
        "127.0.0.1",
        "--port",
        String(this.port),
      ],
      { stdio: ["ignore", "pipe", "pipe"] },
    );
    this.child.stdout!.on("data", (chunk: Buffer) => (this.serverLog += chunk.toString()));
    this.child.stderr!.on("data", (chunk: Buffer) => (this.serverLog += chunk.toString()));
    const deadline = Date.now() + 20_000;
    for (;;) {
      try {
        const probe = await nodeFetch(`${this.base}/export`);
        if (probe.status === 200) return;
      } catch {
        // not listening yet
      }
      if (Date.now() > deadline) {
        throw new Error(`service did not come up; log:\n${this.serverLog}`);
      }
      await new Promise((resolve) => setTimeout(resolve, 50));
    }
  }

  async kill(): Promise<void> {
    if (!this.child) return;
    const child = this.child;
    this.child = null;
    if (child.exitCode === null && child.signalCode === null) {
      child.kill("SIGKILL");
      await once(child, "exit");
    }
  }
}

const harness = new Harness();

beforeAll(async () => {
  if (!fs.existsSync(path.join(DIST, "index.html"))) {
    execFileSync("npm", ["run", "build"], { cwd: FRONTEND_ROOT, stdio: "pipe" });
  }
  harness.dataDir = fs.mkdtempSync(path.join(os.tmpdir(), "rating-e2e-"));
  const rows: string[] = [];
  for (const model of MODELS) {
    for (const [index, sampleId] of SAMPLES.entries()) {
      rows.push(
        JSON.stringify({
          sample_id: sampleId,
          model,
          query: `How should I plan trip number ${index + 1}?`,
          response: `${VOICES[model]} take on trip number ${index + 1}`,
          chat_history: [],
        }),
      );
    }
  }
  fs.mkdirSync(path.join(harness.dataDir, "pools"));
  fs.writeFileSync(path.join(harness.dataDir, "pools", "blind-eval.jsonl"), rows.join("\n") + "\n");
  harness.port = await getFreePort();
  harness.base = `http://127.0.0.1:${harness.port}`;
  await harness.start();
});

afterAll(async () => {
  await harness.kill();
  if (harness.dataDir) fs.rmSync(harness.dataDir, { recursive: true, force: true });
});

function plannedValue(responseText: string): number {
  const model = MODELS.find((m) => responseText.startsWith(VOICES[m]));
  const trip = /trip number (\d+)/.exec(responseText);
  if (!model || !trip) throw new Error(`unrecognized response text: ${responseText}`);
  return PLAN[model][Number(trip[1]) - 1]!;
}

describe("rating UI against the live service", () => {
  it("serves the built UI bundle at /ui", async () => {
    const page = await nodeFetch(`${harness.base}/ui/`);
    expect(page.status).toBe(200);
    const html = await page.text();
    expect(html).toContain('<div id="app">');
    expect(html).toContain("boot.js");
    expect((await nodeFetch(`${harness.base}/ui/main.js`)).status).toBe(200);
    expect((await nodeFetch(`${harness.base}/ui/styles.css`)).status).toBe(200);
  });

  it("completes a blind session across a service restart, then exports cleanly", async () => {
    document.body.innerHTML = '<div id="app"></div>';
    const root = document.getElementById("app")!;
    const api = new RatingApi(harness.base, harness.recordingFetch);

    const created = await api.createSession("blind-eval", "rater-e2e", 4242);
    expect(created.total).toBe(15);
    expect(created.status).toBe("open");

    const handle = startApp(root, {
      api,
      sessionId: created.session_id,
      baseDelayMs: 50,
      maxDelayMs: 400,
    });

    const text = () => root.textContent ?? "";
    const activeButtons = () => {
      const found = [...root.querySelectorAll(".rate-button")] as HTMLButtonElement[];
      return found.length > 0 && found.every((b) => !b.disabled) ? found : null;
    };
    const domSnapshots: string[] = [];

    for (let step = 0; step < 15; step++) {
      await until(() => activeButtons() !== null, `item ${step + 1} on screen`);
      domSnapshots.push(root.innerHTML);
      expect(text()).toContain(`Rated ${step} of 15`);
      const value = plannedValue(root.querySelector(".response-body")!.textContent!);

      if (step === 7) {
        // Pull the plug with a rating still to deliver, then bring the
        // service back on the same data directory.
        await harness.kill();
        activeButtons()!.find((b) => b.dataset.value === String(value))!.click();
        await until(() => text().includes("nothing is lost"), "retry banner during outage");
        await harness.start();
      } else {
        activeButtons()!.find((b) => b.dataset.value === String(value))!.click();
      }

      if (step < 14) {
        await until(() => text().includes(`Rated ${step + 1} of 15`), `progress after ${step + 1}`);
      }
    }

    await handle.finished;
    domSnapshots.push(root.innerHTML);
    expect(text()).toContain("You rated 15 responses.");
    expect(buttonsLeft(root)).toBe(0);

    // Blindness: nothing the rater-facing client saw — wire bytes or DOM —
    // names a model or a sample. The export endpoint was never touched.
    const surfaces = [
      ...harness.exchanges.map((e) => e.requestBody + "\n" + e.responseBody),
      ...domSnapshots,
    ];
    expect(harness.exchanges.some((e) => e.url.includes("/export"))).toBe(false);
    for (const surface of surfaces) {
      for (const model of MODELS) expect(surface).not.toContain(model);
      for (const sampleId of SAMPLES) expect(surface).not.toContain(sampleId);
    }

    // The export (experimenter-side) has every rating exactly once, with the
    // values keyed off the response texts, aggregated to the planned means.
    const exportResponse = await nodeFetch(`${harness.base}/export`);
    expect(exportResponse.status).toBe(200);
    const exported = (await exportResponse.json()) as {
      sessions: Array<{
        session_id: string;
        rater_id: string;
        status: string;
        ratings: Array<{ sample_id: string; model: string; value: number }>;
      }>;
      aggregate: Record<string, { per_rater: Record<string, number>; overall: number }>;
    };
    expect(exported.sessions).toHaveLength(1);
    const session = exported.sessions[0]!;
    expect(session.session_id).toBe(created.session_id);
    expect(session.rater_id).toBe("rater-e2e");
    expect(session.status).toBe("complete");
    expect(session.ratings).toHaveLength(15);

    const seen = new Set<string>();
    for (const rating of session.ratings) {
      const key = `${rating.model}:${rating.sample_id}`;
      expect(seen.has(key)).toBe(false);
      seen.add(key);
      const index = SAMPLES.indexOf(rating.sample_id);
      expect(rating.value).toBe(PLAN[rating.model as (typeof MODELS)[number]][index]);
    }
    expect(seen.size).toBe(15);

    for (const model of MODELS) {
      expect(exported.aggregate[model]!.overall).toBeCloseTo(EXPECTED_MEANS[model], 9);
      expect(exported.aggregate[model]!.per_rater["rater-e2e"]).toBeCloseTo(
        EXPECTED_MEANS[model],
        9,
      );
    }
  });

  it("reopens the finished session read-only", async () => {
    const exportResponse = await nodeFetch(`${harness.base}/export`);
    const exported = (await exportResponse.json()) as { sessions: Array<{ session_id: string }> };
    const sessionId = exported.sessions[0]!.session_id;

    document.body.innerHTML = '<div id="app"></div>';
    const root = document.getElementById("app")!;
    const handle = startApp(root, {
      api: new RatingApi(harness.base, nodeFetch),
      sessionId,
      baseDelayMs: 50,
    });
    await handle.finished;
    expect(root.textContent).toContain("Session already complete");
    expect(root.textContent).toContain("15 of 15 responses were rated.");
    expect(buttonsLeft(root)).toBe(0);
  });
});

function buttonsLeft(root: HTMLElement): number {
  return root.querySelectorAll(".rate-button").length;
}
