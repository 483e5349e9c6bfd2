import type { Action } from "../src/protocol.js";

/** Scaled-preset action bins shared across specs. */
export const WIDTH = 0.096;
export const PLACE_BRIDGE: Action = [2, 31, 18, 0];
export const RESET_IDLE: Action = [4, 64, 0, 0];

/**
 * Deterministic 32-bit PRNG (mulberry32) so scripted episodes are
 * reproducible without any dependency.  Returns floats in [0, 1).
 */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}
