import { execFile } from "node:child_process";
import { mkdtemp, readFile, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";

import { afterAll, beforeAll, expect, test } from "vitest";

import { BoundEnv } from "../src/index.js";
import { mulberry32 } from "./support.js";

const run = promisify(execFile);

const N_EPISODES = 100;
const HORIZON = 30;
const REAL_TOLERANCE = 1e-7;
const REWARD_FIELDS = ["r_cons", "r_succ", "r_flat", "r_mat", "total"] as const;
const INFO_INTS = ["blocks_in_valley", "t", "settle_steps"] as const;
const INFO_FLAGS = ["success", "ever_success", "settle_converged"] as const;

interface TraceStep {
  op: string;
  step: number;
  observation: number[][];
  reward: Record<string, number>;
  done: boolean;
  info: Record<string, number | boolean>;
}

let env: BoundEnv;
let workdir: string;

beforeAll(async () => {
  workdir = await mkdtemp(join(tmpdir(), "blockspan-parity-"));
  env = await BoundEnv.open({ preset: "scaled" });
});

afterAll(async () => {
  await env.close();
  await rm(workdir, { recursive: true, force: true });
});

test(
  "100 scripted episodes reproduce the native CLI trace",
  async () => {
    const rng = mulberry32(0xb10c);
    const [nObjects, , ,] = env.spaces.action_cardinalities;
    const [lo, hi] = env.spaces.width_range;

    let maxRealDiff = 0;
    let intFlagMismatches = 0;
    let firstMismatch = "";

    const noteExact = (ok: boolean, detail: string) => {
      if (!ok) {
        intFlagMismatches += 1;
        if (!firstMismatch) firstMismatch = detail;
      }
    };
    const noteReal = (a: number, b: number, detail: string) => {
      const d = Math.abs(a - b);
      if (d > maxRealDiff) maxRealDiff = d;
      if (!(d <= REAL_TOLERANCE) && !firstMismatch) {
        firstMismatch = `${detail} (|${a} - ${b}| = ${d})`;
      }
    };
    const compareObservation = (
      ours: number[][],
      native: number[][],
      where: string,
    ) => {
      noteExact(ours.length === native.length, `${where}: row count`);
      for (let r = 0; r < native.length; r += 1) {
        for (let c = 0; c < native[r]!.length; c += 1) {
          noteReal(ours[r]![c]!, native[r]![c]!, `${where}: obs[${r}][${c}]`);
        }
      }
    };

    const actionsPath = join(workdir, "actions.json");
    const replayPath = join(workdir, "replay.jsonl");
    const tracePath = join(workdir, "trace.jsonl");

    for (let episode = 0; episode < N_EPISODES; episode += 1) {
      const seed = 1000 + episode;
      const width = lo + rng() * (hi - lo);
      const actions: [number, number, number, number][] = [];
      for (let t = 0; t < HORIZON; t += 1) {
        actions.push([
          2 + Math.floor(rng() * (nObjects - 2)),
          Math.floor(rng() * 65),
          Math.floor(rng() * 32),
          Math.floor(rng() * 2),
        ]);
      }
      await writeFile(actionsPath, JSON.stringify(actions));
      await run("blockspan", [
        "rollout",
        "--actions", actionsPath,
        "--preset", "scaled",
        "--width", String(width),
        "--seed", String(seed),
        "--out", replayPath,
        "--trace", tracePath,
      ]);
      const records = (await readFile(tracePath, "utf8"))
        .trim()
        .split("\n")
        .map((line) => JSON.parse(line) as Record<string, unknown>);
      expect(records).toHaveLength(2 + HORIZON);
      expect(records[0]).toMatchObject({
        format: "blockspan-trace",
        version: 1,
        seed,
      });
      noteReal(width, records[0]!.valley_width as number, `ep${episode}: header width`);

      const observation = await env.reset(seed, width);
      compareObservation(
        observation,
        (records[1] as { observation: number[][] }).observation,
        `ep${episode} reset`,
      );

      for (let t = 0; t < HORIZON; t += 1) {
        const ours = await env.step(actions[t]!);
        const native = records[2 + t] as unknown as TraceStep;
        const where = `ep${episode} step${t}`;
        noteExact(native.step === t, `${where}: step index`);
        compareObservation(ours.observation, native.observation, where);
        for (const field of REWARD_FIELDS) {
          noteReal(ours.reward[field], native.reward[field]!, `${where}: reward.${field}`);
        }
        noteExact(ours.done === native.done, `${where}: done`);
        for (const field of INFO_INTS) {
          noteExact(
            ours.info[field] === native.info[field],
            `${where}: info.${field} (${ours.info[field]} vs ${native.info[field]})`,
          );
        }
        for (const field of INFO_FLAGS) {
          noteExact(
            ours.info[field] === native.info[field],
            `${where}: info.${field} (${ours.info[field]} vs ${native.info[field]})`,
          );
        }
        noteReal(ours.info.valley_width, native.info.valley_width as number,
          `${where}: info.valley_width`);
      }
      if ((episode + 1) % 25 === 0) {
        console.log(
          `parity: ${episode + 1}/${N_EPISODES} episodes, ` +
          `max real diff ${maxRealDiff}, exact mismatches ${intFlagMismatches}`,
        );
      }
    }

    expect(intFlagMismatches, firstMismatch).toBe(0);
    expect(maxRealDiff, firstMismatch).toBeLessThanOrEqual(REAL_TOLERANCE);
  },
  600_000,
);
