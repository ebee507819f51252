/** Command side of the dashboard: validation, seq assignment, send,
 * and the reply watchdog.  Transport is abstract so tests can drive the
 * client with a loopback fake and the app with a real WebSocket.
 *
 * A command that draws no ack or error within the timeout surfaces as a
 * retry prompt; it is never dropped silently.
 */
import {
  Channel,
  ClientCommand,
  FaultKind,
  encodeCommand,
  validateFault,
  validateGains,
  validateSetpoint,
} from "./protocol.js";
import { SessionStore } from "./state.js";

export interface Transport {
  send(line: string): void;
  close(): void;
}

export type SendResult = { ok: true; seq: number } | { ok: false; problem: string };

export interface ClientOptions {
  timeoutMs?: number;
  schedule?: (fn: () => void, ms: number) => unknown;
  cancel?: (handle: unknown) => void;
}

export const DEFAULT_TIMEOUT_MS = 3000;

export class DashboardClient {
  private transport: Transport | null = null;
  private readonly timers = new Map<number, unknown>();
  private readonly retryable = new Map<number, ClientCommand>();
  private readonly timeoutMs: number;
  private readonly schedule: (fn: () => void, ms: number) => unknown;
  private readonly cancel: (handle: unknown) => void;

  constructor(
    readonly store: SessionStore,
    opts: ClientOptions = {},
  ) {
    this.timeoutMs = opts.timeoutMs ?? DEFAULT_TIMEOUT_MS;
    this.schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    this.cancel = opts.cancel ?? ((h) => clearTimeout(h as ReturnType<typeof setTimeout>));
  }

  attach(transport: Transport): void {
    this.transport = transport;
    this.store.setStatus("connected");
  }

  detach(reason = "connection lost"): void {
    if (this.transport) {
      this.transport = null;
      this.store.setStatus("disconnected");
      this.store.addEvent("info", reason);
    }
    for (const [seq, handle] of this.timers) {
      this.cancel(handle);
      this.store.markTimeout(seq);
    }
    this.timers.clear();
  }

  /** Feed every incoming line here; resolves watchdogs on ack/error. */
  onLine(line: string): void {
    const msg = this.store.applyServerLine(line);
    if (msg.type === "ack" || (msg.type === "error" && msg.seq !== undefined)) {
      const seq = msg.seq as number;
      const handle = this.timers.get(seq);
      if (handle !== undefined) {
        this.cancel(handle);
        this.timers.delete(seq);
      }
      this.retryable.delete(seq);
    }
  }

  private issue(build: (seq: number) => ClientCommand, summary: string): SendResult {
    if (!this.transport) {
      this.store.addEvent("rejected", `${summary}: not connected`);
      return { ok: false, problem: "not connected" };
    }
    const seq = this.store.nextSeq();
    const cmd = build(seq);
    this.store.beginPending(seq, summary);
    this.retryable.set(seq, cmd);
    this.transport.send(encodeCommand(cmd));
    const handle = this.schedule(() => {
      this.timers.delete(seq);
      this.store.markTimeout(seq);
    }, this.timeoutMs);
    this.timers.set(seq, handle);
    return { ok: true, seq };
  }

  private reject(summary: string, problem: string): SendResult {
    this.store.addEvent("rejected", `${summary}: ${problem}`);
    return { ok: false, problem };
  }

  sendSetpoint(channel: Channel, value: number): SendResult {
    const summary = `setpoint ch ${channel} -> ${value} degC`;
    const problem = validateSetpoint(channel, value);
    if (problem) return this.reject(summary, problem);
    return this.issue((seq) => ({ type: "setpoint", seq, channel, value }), summary);
  }

  sendGains(channel: number, prop: number, integ: number): SendResult {
    const summary = `gains ch ${channel} -> P=${prop} I=${integ}`;
    const problem = validateGains(channel, prop, integ);
    if (problem) return this.reject(summary, problem);
    return this.issue(
      (seq) => ({ type: "gains", seq, channel, prop, integ }),
      summary,
    );
  }

  sendFault(kind: FaultKind, target: Channel, magnitude = 0, duration?: number): SendResult {
    const summary =
      `fault ${kind} ch ${target}` + (duration !== undefined ? ` for ${duration} s` : "");
    const problem = validateFault(kind, target, magnitude, duration);
    if (problem) return this.reject(summary, problem);
    return this.issue((seq) => {
      const cmd: ClientCommand = { type: "fault", seq, kind, target, magnitude };
      if (duration !== undefined) cmd.duration = duration;
      return cmd;
    }, summary);
  }

  pause(): SendResult {
    return this.issue((seq) => ({ type: "pause", seq }), "pause");
  }

  resume(): SendResult {
    return this.issue((seq) => ({ type: "resume", seq }), "resume");
  }

  reset(): SendResult {
    const res = this.issue((seq) => ({ type: "reset", seq }), "reset");
    if (res.ok) this.store.expectRewind();
    return res;
  }

  requestSnapshot(): SendResult {
    return this.issue((seq) => ({ type: "snapshot_request", seq }), "snapshot request");
  }

  /** Re-sends a timed-out command under a fresh seq. */
  retry(seq: number): SendResult {
    const prompt = this.store.takeRetryPrompt(seq);
    const cmd = this.retryable.get(seq);
    this.retryable.delete(seq);
    if (!prompt || !cmd) return { ok: false, problem: "nothing to retry" };
    return this.issue((newSeq) => ({ ...cmd, seq: newSeq }), `retry: ${prompt.summary}`);
  }

  get pendingTimers(): number {
    return this.timers.size;
  }
}
