export { BoundEnv, openEnv, type BoundEnvOptions } from "./handle.js";
export {
  ClosedHandleError,
  ConfigError,
  InvalidInstructionError,
  ServerError,
  UsageError,
} from "./errors.js";
export type {
  Action,
  RewardBreakdown,
  ServerStats,
  SpaceDescriptors,
  StepInfo,
  StepResult,
} from "./protocol.js";
