/** Client-side error classes mirroring the server's stable error types. */

/** An API was called in a way its contract forbids. */
export class UsageError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "UsageError";
  }
}

/** A configuration value is outside its legal range. */
export class ConfigError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ConfigError";
  }
}

/** An action addresses a body or bin that cannot be acted on. */
export class InvalidInstructionError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "InvalidInstructionError";
  }
}

/** The handle was used after close(). */
export class ClosedHandleError extends UsageError {
  constructor(message: string) {
    super(message);
    this.name = "ClosedHandleError";
  }
}

/** The server process died or answered outside the protocol. */
export class ServerError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ServerError";
  }
}

const BY_TYPE: Record<string, new (message: string) => Error> = {
  usage: UsageError,
  config: ConfigError,
  "invalid-instruction": InvalidInstructionError,
};

/** Raise the client class matching a server error payload. */
export function errorFromPayload(type: string, message: string): Error {
  const cls = BY_TYPE[type] ?? ServerError;
  return new cls(`${message}`);
}
