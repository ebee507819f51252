/** Wire schema of the streaming service: newline-delimited JSON messages,
 * identical over raw TCP and WebSocket text frames.  Field names are fixed
 * by the service; this module is the single place they appear. */

export const N_CHANNELS = 16;
export const TEMP_MIN = 15.0;
export const TEMP_MAX = 100.0;

export const FAULT_KINDS = [
  "gain_degradation",
  "supply_interruption",
  "sensor_offset",
] as const;
export type FaultKind = (typeof FAULT_KINDS)[number];

export type Channel = number | "all";

export interface FrameMsg {
  type: "frame";
  t: number;
  /** 16 measured temperatures, degC; null where the camera read was NaN. */
  points: (number | null)[];
  ffc: boolean;
  /** Optional 80x60 thermal image, row-major (60 rows of 80), 4800 values. */
  image?: number[];
  setpoints?: number[];
  drives?: number[];
  /** Cumulative frames dropped for this subscriber. */
  drops?: number;
}

export interface AckMsg {
  type: "ack";
  seq: number;
  applied_t: number;
}

export interface ErrorMsg {
  type: "error";
  message: string;
  seq?: number;
}

export interface SnapshotMsg {
  type: "snapshot";
  seq: number;
  t: number;
  points: (number | null)[];
  setpoints: number[];
  /** 16 [prop, integ] pairs. */
  gains: [number, number][];
  paused: boolean;
  drops: number;
  seed?: number;
}

export type ServerMessage = FrameMsg | AckMsg | ErrorMsg | SnapshotMsg;

export interface SetpointCmd {
  type: "setpoint";
  seq: number;
  channel: Channel;
  value: number;
}

export interface GainsCmd {
  type: "gains";
  seq: number;
  channel: number;
  prop: number;
  integ: number;
}

export interface FaultCmd {
  type: "fault";
  seq: number;
  kind: FaultKind;
  target: Channel;
  magnitude: number;
  duration?: number;
}

export interface BareCmd {
  type: "pause" | "resume" | "reset" | "snapshot_request";
  seq: number;
}

export type ClientCommand = SetpointCmd | GainsCmd | FaultCmd | BareCmd;

export class ProtocolError extends Error {}

function isNumOrNull(v: unknown): v is number | null {
  return v === null || typeof v === "number";
}

function numArray(v: unknown, n: number, what: string): number[] {
  if (!Array.isArray(v) || v.length !== n || !v.every((x) => typeof x === "number")) {
    throw new ProtocolError(`${what} must be ${n} numbers`);
  }
  return v as number[];
}

function pointArray(v: unknown, what: string): (number | null)[] {
  if (!Array.isArray(v) || v.length !== N_CHANNELS || !v.every(isNumOrNull)) {
    throw new ProtocolError(`${what} must be ${N_CHANNELS} numbers or nulls`);
  }
  return v as (number | null)[];
}

/** Parses and structurally validates one line from the service. */
export function parseServerMessage(line: string): ServerMessage {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    throw new ProtocolError(`not JSON: ${line.slice(0, 80)}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new ProtocolError("message must be a JSON object");
  }
  const obj = raw as Record<string, unknown>;
  switch (obj.type) {
    case "frame": {
      if (typeof obj.t !== "number" || typeof obj.ffc !== "boolean") {
        throw new ProtocolError("frame needs numeric t and boolean ffc");
      }
      const msg: FrameMsg = {
        type: "frame",
        t: obj.t,
        points: pointArray(obj.points, "frame points"),
        ffc: obj.ffc,
      };
      if (obj.image !== undefined && obj.image !== null) {
        msg.image = numArray(obj.image, 4800, "frame image");
      }
      if (obj.setpoints !== undefined) {
        msg.setpoints = numArray(obj.setpoints, N_CHANNELS, "frame setpoints");
      }
      if (obj.drives !== undefined) {
        msg.drives = numArray(obj.drives, N_CHANNELS, "frame drives");
      }
      if (obj.drops !== undefined) {
        if (typeof obj.drops !== "number") throw new ProtocolError("drops must be a number");
        msg.drops = obj.drops;
      }
      return msg;
    }
    case "ack": {
      if (typeof obj.seq !== "number" || typeof obj.applied_t !== "number") {
        throw new ProtocolError("ack needs seq and applied_t");
      }
      return { type: "ack", seq: obj.seq, applied_t: obj.applied_t };
    }
    case "error": {
      if (typeof obj.message !== "string") {
        throw new ProtocolError("error needs a message string");
      }
      const msg: ErrorMsg = { type: "error", message: obj.message };
      if (obj.seq !== undefined) {
        if (typeof obj.seq !== "number") throw new ProtocolError("error seq must be a number");
        msg.seq = obj.seq;
      }
      return msg;
    }
    case "snapshot": {
      if (typeof obj.seq !== "number" || typeof obj.t !== "number" || typeof obj.paused !== "boolean") {
        throw new ProtocolError("snapshot needs seq, t and paused");
      }
      const gains = obj.gains;
      if (
        !Array.isArray(gains) ||
        gains.length !== N_CHANNELS ||
        !gains.every(
          (g) => Array.isArray(g) && g.length === 2 && g.every((x) => typeof x === "number"),
        )
      ) {
        throw new ProtocolError(`snapshot gains must be ${N_CHANNELS} [prop, integ] pairs`);
      }
      const msg: SnapshotMsg = {
        type: "snapshot",
        seq: obj.seq,
        t: obj.t,
        points: pointArray(obj.points, "snapshot points"),
        setpoints: numArray(obj.setpoints, N_CHANNELS, "snapshot setpoints"),
        gains: gains as [number, number][],
        paused: obj.paused,
        drops: typeof obj.drops === "number" ? obj.drops : 0,
      };
      if (obj.seed !== undefined) {
        if (typeof obj.seed !== "number") throw new ProtocolError("seed must be a number");
        msg.seed = obj.seed;
      }
      return msg;
    }
    default:
      throw new ProtocolError(`unknown message type ${String(obj.type)}`);
  }
}

export function encodeCommand(cmd: ClientCommand): string {
  return JSON.stringify(cmd);
}

/* Client-side validation mirrors the service's own checks so a doomed
 * command is rejected before it is ever sent.  Each validator returns a
 * human-readable problem, or null when the input is acceptable. */

function channelProblem(channel: Channel, allowAll: boolean): string | null {
  if (channel === "all") {
    return allowAll ? null : 'target "all" not allowed here';
  }
  if (!Number.isInteger(channel) || channel < 0 || channel >= N_CHANNELS) {
    return `channel must be an integer in [0, ${N_CHANNELS - 1}]`;
  }
  return null;
}

export function validateSetpoint(channel: Channel, value: number): string | null {
  const chProblem = channelProblem(channel, true);
  if (chProblem) return chProblem;
  if (!Number.isFinite(value) || value < TEMP_MIN || value > TEMP_MAX) {
    return `setpoint must lie in [${TEMP_MIN}, ${TEMP_MAX}] degC`;
  }
  return null;
}

export function validateGains(channel: number, prop: number, integ: number): string | null {
  const chProblem = channelProblem(channel, false);
  if (chProblem) return chProblem;
  if (!Number.isFinite(prop) || prop <= 0) return "proportional gain must be positive";
  if (!Number.isFinite(integ) || integ <= 0) return "integral gain must be positive";
  return null;
}

export function validateFault(
  kind: string,
  target: Channel,
  magnitude: number,
  duration?: number,
): string | null {
  if (!(FAULT_KINDS as readonly string[]).includes(kind)) {
    return `fault kind must be one of ${FAULT_KINDS.join(", ")}`;
  }
  if (target === "all" && kind !== "sensor_offset") {
    return 'target "all" is only valid for sensor_offset';
  }
  const chProblem = channelProblem(target, kind === "sensor_offset");
  if (chProblem) return chProblem;
  if (!Number.isFinite(magnitude)) return "magnitude must be finite";
  if (kind === "gain_degradation" && (magnitude < 0 || magnitude > 1)) {
    return "gain_degradation magnitude must lie in [0, 1]";
  }
  if (duration !== undefined && (!Number.isFinite(duration) || duration <= 0)) {
    return "duration must be positive or empty";
  }
  return null;
}
