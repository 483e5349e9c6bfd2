/**
 * Wire types for the line protocol: one JSON request per line on stdin,
 * one JSON response per line on stdout.  Field names mirror the server
 * payloads exactly so parity checks compare like for like.
 */

export interface SpaceDescriptors {
  /** Protocol version the server speaks. */
  protocol: number;
  /** Rows x features of every observation, e.g. [9, 14] for 7 blocks. */
  observation_shape: [number, number];
  /** Sizes of the four factorized action heads: object, y, z, rotation. */
  action_cardinalities: [number, number, number, number];
  /** Fixed episode length in placement steps. */
  horizon: number;
  /** Valley widths the environment will sample or accept. */
  width_range: [number, number];
}

export interface RewardBreakdown {
  r_cons: number;
  r_succ: number;
  r_flat: number;
  r_mat: number;
  total: number;
}

export interface StepInfo {
  success: boolean;
  ever_success: boolean;
  blocks_in_valley: number;
  valley_width: number;
  t: number;
  settle_steps: number;
  settle_converged: boolean;
}

export interface StepResult {
  /** Fresh row-major copy; mutating it never touches simulator state. */
  observation: number[][];
  reward: RewardBreakdown;
  done: boolean;
  info: StepInfo;
}

export interface ServerStats {
  rss_bytes: number;
  episodes: number;
  steps: number;
  initialized: boolean;
}

/** Four integer bins: object, lateral position, height, rotation. */
export type Action = readonly [number, number, number, number];

export interface ErrorPayload {
  type: string;
  message: string;
}

export type Response =
  | { ok: Record<string, unknown> }
  | { error: ErrorPayload };
