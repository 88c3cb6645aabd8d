// Session client: owns the socket, the outgoing sequence counter, and
// the 60 Hz throttle on pose commands. Works against a browser
// WebSocket or anything shaped like one (the tests pass a ws instance).

import {
  HandPose,
  SchemaMismatch,
  ServerMessage,
  handPoseCmd,
  lifecycleCmd,
  parseServerMessage,
  profileCmd,
} from "./wire.js";

export const SOCKET_OPEN = 1;

export interface SocketLike {
  readyState: number;
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export interface SteerEvents {
  onFrame?(msg: ServerMessage & { kind: "state_update" }): void;
  onAck?(msg: ServerMessage & { kind: "ack" }): void;
  onError?(msg: ServerMessage & { kind: "error" }): void;
  onSchemaMismatch?(detail: string): void;
  onNotice?(text: string): void;
  onOpen?(): void;
  onClose?(): void;
}

export interface ClientClock {
  now(): number;
  setTimer(fn: () => void, ms: number): unknown;
  clearTimer(handle: unknown): void;
}

const realClock: ClientClock = {
  now: () => Date.now(),
  setTimer: (fn, ms) => setTimeout(fn, ms),
  clearTimer: (h) => clearTimeout(h as Parameters<typeof clearTimeout>[0]),
};

export const POSE_MIN_INTERVAL_MS = 1000 / 60;

export class SteerClient {
  private seq = 0;
  private lastPoseAt = -Infinity;
  private queuedPose: HandPose | null = null;
  private timer: unknown = null;
  private discardedDrags = 0;
  /** seq of the last state_update, for gap accounting in the HUD. */
  lastStateSeq = -1;
  seqGaps = 0;

  constructor(
    private sock: SocketLike,
    private events: SteerEvents = {},
    private clock: ClientClock = realClock,
  ) {
    sock.onopen = () => this.events.onOpen?.();
    sock.onclose = () => this.events.onClose?.();
    sock.onerror = () => {};
    sock.onmessage = (ev) => this.dispatch(String(ev.data));
  }

  close(): void {
    if (this.timer !== null) this.clock.clearTimer(this.timer);
    this.sock.close();
  }

  private dispatch(text: string): void {
    let msg: ServerMessage;
    try {
      msg = parseServerMessage(text);
    } catch (e) {
      if (e instanceof SchemaMismatch) {
        this.events.onSchemaMismatch?.(e.message);
        return;
      }
      throw e;
    }
    if (msg.kind === "state_update") {
      if (this.lastStateSeq >= 0 && msg.seq > this.lastStateSeq + 1) {
        this.seqGaps += msg.seq - this.lastStateSeq - 1;
      }
      this.lastStateSeq = msg.seq;
      this.events.onFrame?.(msg);
    } else if (msg.kind === "ack") {
      this.events.onAck?.(msg);
    } else {
      this.events.onError?.(msg);
    }
  }

  private sendRaw(text: string): boolean {
    if (this.sock.readyState !== SOCKET_OPEN) return false;
    this.sock.send(text);
    return true;
  }

  /**
   * Stream a pose while dragging. Sends at most every 16.7 ms; the
   * newest pose wins when moves arrive faster than that.
   */
  handPose(pose: HandPose): void {
    const now = this.clock.now();
    if (now - this.lastPoseAt >= POSE_MIN_INTERVAL_MS) {
      this.sendPoseNow(pose, now);
      return;
    }
    this.queuedPose = pose;
    if (this.timer === null) {
      const wait = POSE_MIN_INTERVAL_MS - (now - this.lastPoseAt);
      this.timer = this.clock.setTimer(() => {
        this.timer = null;
        if (this.queuedPose !== null) {
          const p = this.queuedPose;
          this.queuedPose = null;
          this.sendPoseNow(p, this.clock.now());
        }
      }, wait);
    }
  }

  /** Release: the exact final pose goes out immediately, never dropped. */
  handPoseFinal(pose: HandPose): void {
    if (this.timer !== null) {
      this.clock.clearTimer(this.timer);
      this.timer = null;
    }
    this.queuedPose = null;
    const sent = this.sendPoseNow(pose, this.clock.now());
    if (!sent || this.discardedDrags > 0) {
      // sendPoseNow already counted the final pose if it failed
      const n = this.discardedDrags;
      this.events.onNotice?.(`discarded ${n} drag update${n === 1 ? "" : "s"} (disconnected)`);
      this.discardedDrags = 0;
    }
  }

  private sendPoseNow(pose: HandPose, now: number): boolean {
    const ok = this.sendRaw(handPoseCmd(this.seq, pose));
    if (ok) {
      this.seq += 1;
      this.lastPoseAt = now;
    } else {
      this.discardedDrags += 1;
    }
    return ok;
  }

  /** Returns the client_seq used, or -1 when not connected. */
  profile(name: string): number {
    const s = this.seq;
    if (!this.sendRaw(profileCmd(s, name))) return -1;
    this.seq += 1;
    return s;
  }

  lifecycle(action: "start" | "pause" | "reset"): number {
    const s = this.seq;
    if (!this.sendRaw(lifecycleCmd(s, action))) return -1;
    this.seq += 1;
    return s;
  }
}
