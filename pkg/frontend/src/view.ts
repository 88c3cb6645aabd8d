// All mutable client state in one place. Network callbacks write it,
// the render loop reads it once per animation frame; nothing here talks
// to the socket or the DOM.

import type { StateUpdate, Vec3 } from "./wire.js";

export type Connection = "connecting" | "connected" | "closed";

export interface Toast {
  text: string;
  at: number; // ms timestamp, for expiry
}

export interface Camera {
  yaw: number;   // rad, orbit around world z
  pitch: number; // rad, elevation
  zoom: number;  // px per meter
  center: Vec3;  // world point at screen center
}

export type DragMode = "translate" | "rotate" | "orbit";

export interface DragState {
  mode: DragMode;
  startPx: [number, number];
  lastPx: [number, number];
  // pose of the hand when the drag began; commands are start + delta so
  // intermediate throttled updates cannot accumulate rounding
  handPos0: Vec3;
  handQuat0: [number, number, number, number];
  ringAngle0: number;
}

export class ViewState {
  // latest applied state_update; the scene is drawn from this and only
  // this (no client-side extrapolation, stale frames render as-is)
  frame: StateUpdate | null = null;
  framesApplied = 0;
  lastFrameAt = 0;

  connection: Connection = "connecting";
  role: "steering" | "observer" | null = null;
  sessionId: string | null = null;
  schemaError: string | null = null;
  fkWarning: string | null = null;

  // profile switching: the button is optimistic, the panel is not; the
  // shown profile always comes from acks/frames
  profilePending: string | null = null;

  showForces = false;
  toasts: Toast[] = [];
  // yaw pi/2 looks along +y: +x right, +z up, the arm side-on
  camera: Camera = { yaw: Math.PI / 2, pitch: 0.35, zoom: 420, center: [0.45, 0, 0.45] };
  drag: DragState | null = null;

  applyFrame(msg: StateUpdate, nowMs: number): void {
    this.frame = msg;
    this.framesApplied += 1;
    this.lastFrameAt = nowMs;
  }

  /** Pair distances exactly as the server reported them, no recompute. */
  readouts(): number[] {
    return this.frame ? this.frame.pair_distances : [];
  }

  toast(text: string, nowMs: number): void {
    this.toasts.push({ text, at: nowMs });
    if (this.toasts.length > 5) this.toasts.shift();
  }

  pruneToasts(nowMs: number, ttlMs = 4000): void {
    this.toasts = this.toasts.filter((t) => nowMs - t.at < ttlMs);
  }
}
