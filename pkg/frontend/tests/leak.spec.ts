import { afterAll, beforeAll, expect, test } from "vitest";

import { BoundEnv } from "../src/index.js";
import { RESET_IDLE } from "./support.js";

/**
 * Drives one handle through 10^5 reset/step cycles and checks that the
 * server's resident set stays flat after a warmup that lets allocator
 * pools and JIT caches reach steady state.  Requests are pipelined in
 * batches so the run is throughput-bound rather than latency-bound.
 */

const WARMUP = 2_000;
const CYCLES = 100_000;
const BATCH = 500;
const SAMPLE_EVERY = 10_000;
const SERVER_GROWTH_LIMIT = 32 * 1024 * 1024;
const CLIENT_GROWTH_LIMIT = 256 * 1024 * 1024;

let env: BoundEnv;

beforeAll(async () => {
  env = await BoundEnv.open({ preset: "scaled" });
});

afterAll(async () => {
  await env.close();
});

function cycleWidth(i: number): number {
  const [lo, hi] = env.spaces.width_range;
  return lo + ((i % 7) / 7) * (hi - lo);
}

async function runCycles(start: number, count: number): Promise<void> {
  for (let done = 0; done < count; done += BATCH) {
    const n = Math.min(BATCH, count - done);
    const pending: Promise<unknown>[] = [];
    for (let j = 0; j < n; j += 1) {
      const i = start + done + j;
      pending.push(env.reset(i % 997, cycleWidth(i)));
      pending.push(env.step(RESET_IDLE));
    }
    await Promise.all(pending);
  }
}

const mib = (bytes: number) => (bytes / 1048576).toFixed(1);

test(
  "memory stays flat over a hundred thousand reset/step cycles",
  async () => {
    await runCycles(0, WARMUP);
    const baseline = await env.stats();
    const clientBaseline = process.memoryUsage().rss;
    console.log(`leak: warmed up, server rss ${mib(baseline.rss_bytes)} MiB`);

    for (let done = 0; done < CYCLES; done += SAMPLE_EVERY) {
      await runCycles(WARMUP + done, SAMPLE_EVERY);
      const s = await env.stats();
      console.log(
        `leak: ${done + SAMPLE_EVERY}/${CYCLES} cycles, ` +
        `server rss ${mib(s.rss_bytes)} MiB`,
      );
    }

    const final = await env.stats();
    expect(final.episodes).toBe(WARMUP + CYCLES);
    expect(final.steps).toBe(WARMUP + CYCLES);

    const serverGrowth = final.rss_bytes - baseline.rss_bytes;
    const clientGrowth = process.memoryUsage().rss - clientBaseline;
    console.log(
      `leak: server growth ${mib(serverGrowth)} MiB, ` +
      `client growth ${mib(clientGrowth)} MiB`,
    );
    expect(
      serverGrowth,
      `server rss grew ${mib(serverGrowth)} MiB after warmup`,
    ).toBeLessThan(SERVER_GROWTH_LIMIT);
    expect(
      clientGrowth,
      `client rss grew ${mib(clientGrowth)} MiB`,
    ).toBeLessThan(CLIENT_GROWTH_LIMIT);
  },
  900_000,
);
