/** Wire protocol shared with the interaction service (schema version 1).
 *
 * Fixtures for every documented message live in ../wire-fixtures and are
 * round-tripped by both the Python and TypeScript test suites.
 */

export const WIRE_VERSION = 1;

export interface StateDoc {
  x_r: number;
  y_r: number;
  x_h: number;
  v_r: number;
  v_h: number;
}

export interface LatentEntry {
  k: number;
  lambda: number;
  p: number;
}

export interface BeliefDoc {
  state: StateDoc;
  latent: LatentEntry[];
}

export interface ConfigMsg {
  type: "config";
  version: number;
  tick_ms: number;
  config_hash: string;
  grid: { x: number[]; y: number[]; v_r: number[]; v_h: number[] };
  lanes: { width: number; lower_center: number; upper_center: number };
  car: { length: number; width: number };
  action_set: {
    human_accels: number[];
    robot: { accel: number; lat: number }[];
  };
  latent_types: { k: number; lambda: number }[];
}

export interface SnapshotMsg {
  type: "snapshot";
  version: number;
  t: number;
  phase: "lobby" | "running" | "finished";
  state: StateDoc;
  belief: BeliefDoc;
  last_robot_action: { accel: number; lat: number } | null;
  last_human_accel: number;
  reward: number;
  info_gain: number;
  diagnostics: Record<string, unknown> | null;
  outcome: string | null;
}

export interface InputMsg {
  type: "input";
  version: number;
  accel: number;
}

export interface ControlMsg {
  type: "control";
  version: number;
  action: "start" | "reset" | "select_planner";
  planner?: "ours" | "blp1";
  seed?: number;
}

export interface ErrorMsg {
  type: "error";
  version: number;
  message: string;
}

export type ServerMessage = ConfigMsg | SnapshotMsg | ErrorMsg;
export type ClientMessage = InputMsg | ControlMsg;
export type Message = ServerMessage | ClientMessage;

export class ProtocolError extends Error {}

const CONTROL_ACTIONS = new Set(["start", "reset", "select_planner"]);

/** Parse and validate one frame; unknown types pass through untouched. */
export function decodeMessage(text: string): Record<string, unknown> {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (err) {
    throw new ProtocolError(`malformed frame: ${err}`);
  }
  if (typeof doc !== "object" || doc === null || !("type" in doc)) {
    throw new ProtocolError("frame is not an object with a `type` field");
  }
  const msg = doc as Record<string, unknown>;
  switch (msg.type) {
    case "input":
      if (typeof msg.accel !== "number") {
        throw new ProtocolError("input message needs a numeric `accel`");
      }
      break;
    case "control":
      if (!CONTROL_ACTIONS.has(msg.action as string)) {
        throw new ProtocolError("unknown control action");
      }
      break;
    case "snapshot":
    case "config":
    case "error":
      if (typeof msg.version !== "number") {
        throw new ProtocolError(`${msg.type} message needs a \`version\``);
      }
      break;
    default:
      break; // unknown types are the session's business, not the codec's
  }
  return msg;
}

export function encodeMessage(msg: Record<string, unknown>): string {
  if (!("type" in msg)) {
    throw new ProtocolError("message missing `type`");
  }
  return JSON.stringify(msg);
}

export function inputMessage(accel: number): string {
  return encodeMessage({ type: "input", version: WIRE_VERSION, accel });
}

export function controlMessage(
  action: ControlMsg["action"],
  extra: Partial<ControlMsg> = {},
): string {
  return encodeMessage({
    type: "control",
    version: WIRE_VERSION,
    action,
    ...extra,
  });
}
