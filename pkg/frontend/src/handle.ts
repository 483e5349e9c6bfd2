/**
 * One native environment instance behind one child process.
 *
 * `BoundEnv.open()` spawns the server, performs the init handshake, and
 * caches the space descriptors.  Requests are written as single JSON
 * lines and answered strictly in order, so calls may be pipelined; the
 * handle itself is not meant to be shared across workers — open one
 * handle per concurrent episode stream instead.
 *
 * Every observation is a fresh copy decoded from the response line;
 * callers can mutate or retain it freely.  After `close()` resolves,
 * every further call rejects with `ClosedHandleError`.
 */

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { createInterface } from "node:readline";

import { ClosedHandleError, ServerError, errorFromPayload } from "./errors.js";
import type {
  Action,
  Response,
  ServerStats,
  SpaceDescriptors,
  StepResult,
} from "./protocol.js";

export interface BoundEnvOptions {
  /** Named configuration preset; the server's default is "full". */
  preset?: "full" | "scaled";
  /** Dotted-path overrides in the CLI's --set syntax, e.g. {"episode.scene.n_blocks": "4"}. */
  overrides?: Record<string, string | number | boolean>;
  /**
   * Server argv.  Defaults to $BLOCKSPAN_ENV_SERVER (whitespace-split)
   * when set, else ["blockspan", "env-server"].
   */
  command?: string[];
}

function serverCommand(options: BoundEnvOptions): string[] {
  if (options.command && options.command.length > 0) return options.command;
  const fromEnv = process.env.BLOCKSPAN_ENV_SERVER;
  if (fromEnv && fromEnv.trim()) return fromEnv.trim().split(/\s+/);
  return ["blockspan", "env-server"];
}

interface Waiter {
  resolve: (value: Record<string, unknown>) => void;
  reject: (reason: Error) => void;
}

/** JSON-lines request/response channel to one server process. */
class LineClient {
  private readonly waiters: Waiter[] = [];
  private stderrTail = "";
  private failure: Error | null = null;
  /** Set before the final request so the exit that follows is orderly. */
  expectExit = false;

  constructor(private readonly proc: ChildProcessWithoutNullStreams) {
    createInterface({ input: proc.stdout }).on("line", (line) => {
      const waiter = this.waiters.shift();
      if (!waiter) return; // unsolicited output; the protocol has none
      let response: Response;
      try {
        response = JSON.parse(line) as Response;
      } catch {
        waiter.reject(new ServerError(`unparseable response line: ${line}`));
        return;
      }
      if ("error" in response) {
        waiter.reject(errorFromPayload(response.error.type, response.error.message));
      } else {
        waiter.resolve(response.ok);
      }
    });
    proc.stderr.on("data", (chunk: Buffer) => {
      this.stderrTail = (this.stderrTail + chunk.toString()).slice(-4096);
    });
    proc.on("error", (err) => {
      this.fail(new ServerError(`server failed to start: ${err.message}`));
    });
    proc.on("exit", (code, signal) => {
      if (this.expectExit) return;
      const detail = this.stderrTail ? `; stderr: ${this.stderrTail.trim()}` : "";
      this.fail(new ServerError(`server exited (code ${code}, signal ${signal})${detail}`));
    });
  }

  request(payload: Record<string, unknown>): Promise<Record<string, unknown>> {
    if (this.failure) return Promise.reject(this.failure);
    return new Promise((resolve, reject) => {
      this.waiters.push({ resolve, reject });
      this.proc.stdin.write(JSON.stringify(payload) + "\n", (err) => {
        if (err) reject(new ServerError(`write failed: ${err.message}`));
      });
    });
  }

  kill(): void {
    this.expectExit = true;
    this.proc.kill("SIGKILL");
  }

  /** Resolve once the process is gone, force-killing after a grace period. */
  reaped(): Promise<void> {
    if (this.proc.exitCode !== null || this.proc.signalCode !== null) {
      return Promise.resolve();
    }
    return new Promise((resolve) => {
      const deadline = setTimeout(() => {
        this.proc.kill("SIGKILL");
        resolve();
      }, 2000);
      deadline.unref?.();
      this.proc.once("exit", () => {
        clearTimeout(deadline);
        resolve();
      });
    });
  }

  private fail(err: Error): void {
    this.failure = err;
    for (const waiter of this.waiters.splice(0)) waiter.reject(err);
  }
}

export class BoundEnv {
  /** Space descriptors cached from the init handshake. */
  readonly spaces: SpaceDescriptors;

  private isClosed = false;

  private constructor(
    private readonly client: LineClient,
    spaces: SpaceDescriptors,
  ) {
    this.spaces = spaces;
  }

  /** Spawn a server, run the init handshake, and return the live handle. */
  static async open(options: BoundEnvOptions = {}): Promise<BoundEnv> {
    const argv = serverCommand(options);
    const client = new LineClient(
      spawn(argv[0]!, argv.slice(1), { stdio: ["pipe", "pipe", "pipe"] }),
    );
    try {
      const spaces = (await client.request({
        op: "init",
        preset: options.preset,
        overrides: options.overrides,
      })) as unknown as SpaceDescriptors;
      return new BoundEnv(client, spaces);
    } catch (err) {
      client.kill();
      throw err;
    }
  }

  get closed(): boolean {
    return this.isClosed;
  }

  /** Start a fresh episode; omitted seed/width are sampled server-side. */
  async reset(seed?: number | null, width?: number | null): Promise<number[][]> {
    const body = await this.request({
      op: "reset",
      seed: seed ?? undefined,
      width: width ?? undefined,
    });
    return body.observation as number[][];
  }

  /** Apply one [object, y, z, rotation] action and settle the world. */
  async step(action: Action): Promise<StepResult> {
    const body = await this.request({ op: "step", action: [...action] });
    return body as unknown as StepResult;
  }

  /** Current scene as a self-contained SVG document. */
  async render(): Promise<string> {
    const body = await this.request({ op: "render" });
    return body.svg as string;
  }

  /** Server-side counters, including resident set size in bytes. */
  async stats(): Promise<ServerStats> {
    const body = await this.request({ op: "stats" });
    return body as unknown as ServerStats;
  }

  /** Shut the server down; the handle is unusable afterwards. */
  async close(): Promise<void> {
    this.client.expectExit = true;
    try {
      await this.request({ op: "close" });
    } finally {
      this.isClosed = true;
    }
    await this.client.reaped();
  }

  private request(payload: Record<string, unknown>): Promise<Record<string, unknown>> {
    if (this.isClosed) {
      return Promise.reject(
        new ClosedHandleError(`${String(payload.op)} requested on a closed handle`),
      );
    }
    return this.client.request(payload);
  }
}

/** Convenience alias for `BoundEnv.open`. */
export function openEnv(options: BoundEnvOptions = {}): Promise<BoundEnv> {
  return BoundEnv.open(options);
}
