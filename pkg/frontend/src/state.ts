/** Session state behind the dashboard: one ordered stream of server
 * messages in, immutable-by-convention snapshots out for rendering.
 *
 * Sequence bookkeeping invariant: every command the user fires opens
 * exactly one pending action keyed by its seq, and every ack or error
 * from the service closes exactly one.  An ack that matches nothing is
 * counted as an orphan; a healthy session ends with zero.
 */
import { RingBuffer } from "./ring.js";
import {
  FrameMsg,
  N_CHANNELS,
  ServerMessage,
  SnapshotMsg,
  parseServerMessage,
} from "./protocol.js";

export type ConnectionStatus = "disconnected" | "connecting" | "connected";

export type EventKind =
  | "sent"
  | "ack"
  | "error"
  | "ffc"
  | "timeout"
  | "orphan"
  | "rejected"
  | "info";

export interface EventEntry {
  wallMs: number;
  kind: EventKind;
  text: string;
  seq?: number;
}

export interface PendingAction {
  seq: number;
  summary: string;
  sentWallMs: number;
}

export interface Sample {
  t: number;
  v: number;
}

export const DEFAULT_CHART_CAPACITY = 2400;
const EVENT_FEED_LIMIT = 200;

export interface SessionStoreOptions {
  chartCapacity?: number;
  now?: () => number;
}

export class SessionStore {
  status: ConnectionStatus = "disconnected";
  latestFrame: FrameMsg | null = null;
  latestSnapshot: SnapshotMsg | null = null;

  /** Form state, refreshed from snapshots, never from user-typed values. */
  setpointInputs: number[] = new Array(N_CHANNELS).fill(20);
  gainInputs: { prop: number; integ: number }[] = Array.from(
    { length: N_CHANNELS },
    () => ({ prop: 1, integ: 0.1 }),
  );

  events: EventEntry[] = [];
  readonly measured: RingBuffer<Sample>[];
  readonly setpointTrace: RingBuffer<Sample>[];
  readonly driveTrace: RingBuffer<Sample>[];

  readonly pending = new Map<number, PendingAction>();
  readonly retryPrompts: PendingAction[] = [];
  orphanCount = 0;
  resolvedCount = 0;
  staleDiscards = 0;
  drops = 0;

  private seqCounter = 0;
  private allowRewind = false;
  private readonly now: () => number;

  constructor(opts: SessionStoreOptions = {}) {
    const cap = opts.chartCapacity ?? DEFAULT_CHART_CAPACITY;
    const make = () => new RingBuffer<Sample>(cap);
    this.measured = Array.from({ length: N_CHANNELS }, make);
    this.setpointTrace = Array.from({ length: N_CHANNELS }, make);
    this.driveTrace = Array.from({ length: N_CHANNELS }, make);
    this.now = opts.now ?? (() => Date.now());
  }

  nextSeq(): number {
    this.seqCounter += 1;
    return this.seqCounter;
  }

  addEvent(kind: EventKind, text: string, seq?: number): void {
    const entry: EventEntry = { wallMs: this.now(), kind, text };
    if (seq !== undefined) entry.seq = seq;
    this.events.push(entry);
    if (this.events.length > EVENT_FEED_LIMIT) {
      this.events.splice(0, this.events.length - EVENT_FEED_LIMIT);
    }
  }

  setStatus(status: ConnectionStatus): void {
    this.status = status;
    if (status !== "connected") {
      this.addEvent("info", status === "connecting" ? "connecting" : "disconnected");
    } else {
      this.addEvent("info", "connected");
    }
  }

  /** True while no fresh frame should be trusted (banner state). */
  get stale(): boolean {
    return this.status !== "connected";
  }

  beginPending(seq: number, summary: string): void {
    this.pending.set(seq, { seq, summary, sentWallMs: this.now() });
    this.addEvent("sent", summary, seq);
  }

  /** Moves a silent command to the retry prompt list; not an orphan. */
  markTimeout(seq: number): void {
    const action = this.pending.get(seq);
    if (!action) return;
    this.pending.delete(seq);
    this.retryPrompts.push(action);
    this.addEvent("timeout", `no reply within timeout: ${action.summary}`, seq);
  }

  /** Drops a retry prompt (user chose to retry or dismiss). */
  takeRetryPrompt(seq: number): PendingAction | undefined {
    const i = this.retryPrompts.findIndex((a) => a.seq === seq);
    if (i < 0) return undefined;
    return this.retryPrompts.splice(i, 1)[0];
  }

  /** Expected rewind: the next frame may carry a smaller timestamp. */
  expectRewind(): void {
    this.allowRewind = true;
  }

  private resolve(seq: number, ok: boolean, detail: string): void {
    const action = this.pending.get(seq);
    if (action) {
      this.pending.delete(seq);
      this.resolvedCount += 1;
      this.addEvent(ok ? "ack" : "error", `${action.summary}: ${detail}`, seq);
      return;
    }
    // a late reply after the timeout still resolves the prompt
    const late = this.takeRetryPrompt(seq);
    if (late) {
      this.resolvedCount += 1;
      this.addEvent(ok ? "ack" : "error", `${late.summary} (late): ${detail}`, seq);
      return;
    }
    this.orphanCount += 1;
    this.addEvent("orphan", `reply for unknown seq ${seq}: ${detail}`, seq);
  }

  applyServerLine(line: string): ServerMessage {
    const msg = parseServerMessage(line);
    this.applyServerMessage(msg);
    return msg;
  }

  applyServerMessage(msg: ServerMessage): void {
    switch (msg.type) {
      case "frame":
        this.applyFrame(msg);
        return;
      case "ack":
        this.resolve(msg.seq, true, `applied at t=${msg.applied_t.toFixed(1)} s`);
        return;
      case "error":
        if (msg.seq !== undefined) {
          this.resolve(msg.seq, false, msg.message);
        } else {
          this.addEvent("error", msg.message);
        }
        return;
      case "snapshot":
        this.applySnapshot(msg);
        return;
    }
  }

  private applyFrame(frame: FrameMsg): void {
    if (this.latestFrame && frame.t < this.latestFrame.t && !this.allowRewind) {
      this.staleDiscards += 1;
      return;
    }
    this.allowRewind = false;
    this.latestFrame = frame;
    if (frame.drops !== undefined) this.drops = frame.drops;
    if (frame.ffc) this.addEvent("ffc", `flat-field correction at t=${frame.t.toFixed(1)} s`);
    for (let ch = 0; ch < N_CHANNELS; ch++) {
      const p = frame.points[ch];
      if (p !== null && p !== undefined) this.measured[ch]!.push({ t: frame.t, v: p });
      if (frame.setpoints) this.setpointTrace[ch]!.push({ t: frame.t, v: frame.setpoints[ch]! });
      if (frame.drives) this.driveTrace[ch]!.push({ t: frame.t, v: frame.drives[ch]! });
    }
  }

  private applySnapshot(snap: SnapshotMsg): void {
    // the snapshot's seq belongs to the request, which the separate ack
    // already resolved; treat the snapshot purely as data
    this.latestSnapshot = snap;
    this.drops = snap.drops;
    this.setpointInputs = snap.setpoints.slice();
    this.gainInputs = snap.gains.map(([prop, integ]) => ({ prop, integ }));
    this.addEvent("info", `snapshot at t=${snap.t.toFixed(1)} s${snap.paused ? " (paused)" : ""}`);
  }

  /** Zero when every reply matched a pending action; the health check. */
  get orphans(): number {
    return this.orphanCount;
  }
}
