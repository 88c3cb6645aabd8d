// Client behavior that must hold without a server: the 60 Hz pose
// throttle with exact final pose, disconnected-drag discards, ack/error
// routing, and stream gap accounting.

import { describe, expect, it } from "vitest";
import { POSE_MIN_INTERVAL_MS, SOCKET_OPEN, SteerClient, SocketLike } from "../src/client.js";
import type { ClientClock } from "../src/client.js";

class FakeSocket implements SocketLike {
  readyState = SOCKET_OPEN;
  sent: string[] = [];
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {
    this.readyState = 3;
  }
  deliver(obj: unknown): void {
    this.onmessage?.({ data: JSON.stringify(obj) });
  }
}

class FakeClock implements ClientClock {
  t = 0;
  timers: { at: number; fn: () => void }[] = [];
  now(): number {
    return this.t;
  }
  setTimer(fn: () => void, ms: number): unknown {
    const h = { at: this.t + ms, fn };
    this.timers.push(h);
    return h;
  }
  clearTimer(handle: unknown): void {
    this.timers = this.timers.filter((t) => t !== handle);
  }
  advance(ms: number): void {
    this.t += ms;
    const due = this.timers.filter((t) => t.at <= this.t);
    this.timers = this.timers.filter((t) => t.at > this.t);
    for (const d of due) d.fn();
  }
}

function pose(y: number) {
  return { position: [0.6, y, 0.6] as [number, number, number], rpy: [0, 0, Math.PI] as [number, number, number] };
}

describe("pose throttle", () => {
  it("sends at most 60 Hz while dragging, newest pose wins", () => {
    const sock = new FakeSocket();
    const clock = new FakeClock();
    const client = new SteerClient(sock, {}, clock);
    // 100 moves over 200 ms: 2 ms apart, far faster than the wire rate
    for (let i = 0; i < 100; i++) {
      client.handPose(pose(i * 0.001));
      clock.advance(2);
    }
    clock.advance(POSE_MIN_INTERVAL_MS); // let the trailing send flush
    const maxAllowed = Math.floor(200 / POSE_MIN_INTERVAL_MS) + 2;
    expect(sock.sent.length).toBeLessThanOrEqual(maxAllowed);
    expect(sock.sent.length).toBeGreaterThan(5);
    // the last frame carries the newest queued pose, nothing stale
    const last = JSON.parse(sock.sent[sock.sent.length - 1]);
    expect(last.position[1]).toBeCloseTo(0.099, 12);
    // seq strictly increasing from 0
    const seqs = sock.sent.map((s) => JSON.parse(s).seq);
    expect(seqs[0]).toBe(0);
    for (let i = 1; i < seqs.length; i++) expect(seqs[i]).toBe(seqs[i - 1] + 1);
  });

  it("release sends the exact final pose immediately", () => {
    const sock = new FakeSocket();
    const clock = new FakeClock();
    const client = new SteerClient(sock, {}, clock);
    client.handPose(pose(0.0));
    clock.advance(1);
    client.handPose(pose(0.123)); // throttled, queued
    client.handPoseFinal(pose(0.2)); // release beats the timer
    const last = JSON.parse(sock.sent[sock.sent.length - 1]);
    expect(last.position[1]).toBe(0.2);
    clock.advance(100);
    // the queued intermediate pose was dropped, not sent late
    expect(JSON.parse(sock.sent[sock.sent.length - 1]).position[1]).toBe(0.2);
  });

  it("discards drags while disconnected and says so once", () => {
    const sock = new FakeSocket();
    sock.readyState = 0; // connecting
    const clock = new FakeClock();
    const notices: string[] = [];
    const client = new SteerClient(sock, { onNotice: (t) => notices.push(t) }, clock);
    client.handPose(pose(0.1));
    clock.advance(50);
    client.handPose(pose(0.2));
    clock.advance(50);
    client.handPoseFinal(pose(0.3));
    expect(sock.sent.length).toBe(0);
    expect(notices).toHaveLength(1);
    expect(notices[0]).toMatch(/discarded 3 drag updates/);
  });
});

describe("message routing", () => {
  it("routes frames, acks, errors, and schema mismatches", () => {
    const sock = new FakeSocket();
    const got: string[] = [];
    new SteerClient(sock, {
      onFrame: () => got.push("frame"),
      onAck: (m) => got.push(`ack:${m.applied}`),
      onError: (m) => got.push(`error:${m.code}`),
      onSchemaMismatch: (d) => got.push(`schema:${d}`),
    });
    sock.deliver({ v: 1, kind: "ack", session_id: "s", seq: 0, applied: "connect" });
    sock.deliver({ v: 1, kind: "error", session_id: "s", seq: 1, code: "read-only", detail: "x" });
    sock.deliver({ v: 9, kind: "ack", session_id: "s", seq: 2, applied: "start" });
    expect(got).toEqual(["ack:connect", "error:read-only", expect.stringMatching(/^schema:.*version 9/)]);
  });

  it("tracks state_update sequence gaps for the HUD", () => {
    const sock = new FakeSocket();
    const frames: number[] = [];
    const client = new SteerClient(sock, { onFrame: (m) => frames.push(m.seq) });
    const base = {
      v: 1, kind: "state_update", session_id: "s", t: 0, q: [0], alpha: 0,
      phase: "tracking", command: "none", fingers_closed: false,
      pair_distances: [0, 0, 0],
      gripper_points: [[0, 0, 0], [0, 0, 0], [0, 0, 0]],
      target_points: [[0, 0, 0], [0, 0, 0], [0, 0, 0]],
      finger_points: [[0, 0, 0], [0, 0, 0]],
      region_centers: [],
      hand: { position: [0, 0, 0], quat: [0, 0, 0, 1] },
      object: { position: [0, 0, 0], quat: [0, 0, 0, 1] },
      profile: { name: "authoritative", spring2_f_max: 8 },
      running: true, faulted: null, tick: 0, drops: 0,
    };
    sock.deliver({ ...base, seq: 10 });
    sock.deliver({ ...base, seq: 11 });
    sock.deliver({ ...base, seq: 14, drops: 2 });
    expect(frames).toEqual([10, 11, 14]);
    expect(client.seqGaps).toBe(2);
    expect(client.lastStateSeq).toBe(14);
  });
});
