// Wire schema for the live-session service, mirrored from
// docs/wire-protocol.md in the parent repo. Every message is a single
// JSON text frame with {v, kind, session_id, seq}.

export const WIRE_VERSION = 1;

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number]; // xyzw

export interface PoseWire {
  position: Vec3;
  quat: Quat;
}

export interface ProfileWire {
  name: string;
  spring2_f_max: number;
}

export interface StateUpdate {
  v: number;
  kind: "state_update";
  session_id: string;
  seq: number;
  t: number;
  q: number[];
  alpha: number;
  phase: string;
  command: string;
  fingers_closed: boolean;
  pair_distances: number[];
  gripper_points: Vec3[];
  target_points: Vec3[];
  finger_points: Vec3[];
  region_centers: Vec3[];
  hand: PoseWire;
  object: PoseWire;
  profile: ProfileWire;
  running: boolean;
  faulted: string | null;
  tick: number;
  drops: number;
}

export interface Ack {
  v: number;
  kind: "ack";
  session_id: string;
  seq: number;
  applied: string;
  client_seq?: number;
  // connect acks carry role/stream_hz/profile/object; profile acks carry
  // profile/spring2_f_max; reset acks carry noop. Kept open-ended.
  [key: string]: unknown;
}

export interface ErrorMsg {
  v: number;
  kind: "error";
  session_id: string;
  seq: number;
  code: string;
  detail: string;
  client_seq?: number;
}

export type ServerMessage = StateUpdate | Ack | ErrorMsg;

/** Raised when a frame does not speak wire schema v1. */
export class SchemaMismatch extends Error {}

function isVec3(v: unknown): v is Vec3 {
  return Array.isArray(v) && v.length === 3 && v.every((x) => typeof x === "number");
}

function isPose(v: unknown): v is PoseWire {
  if (typeof v !== "object" || v === null) return false;
  const p = v as Record<string, unknown>;
  return isVec3(p.position) && Array.isArray(p.quat) && p.quat.length === 4;
}

function isPointList(v: unknown, n: number): boolean {
  return Array.isArray(v) && v.length === n && v.every(isVec3);
}

export function parseServerMessage(text: string): ServerMessage {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new SchemaMismatch("frame is not JSON");
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new SchemaMismatch("frame is not an object");
  }
  const msg = raw as Record<string, unknown>;
  if (msg.v !== WIRE_VERSION) {
    throw new SchemaMismatch(`wire version ${String(msg.v)}, expected ${WIRE_VERSION}`);
  }
  if (typeof msg.session_id !== "string" || typeof msg.seq !== "number") {
    throw new SchemaMismatch("missing session_id/seq");
  }
  switch (msg.kind) {
    case "ack":
      if (typeof msg.applied !== "string") throw new SchemaMismatch("ack without applied");
      return msg as unknown as Ack;
    case "error":
      if (typeof msg.code !== "string") throw new SchemaMismatch("error without code");
      return msg as unknown as ErrorMsg;
    case "state_update": {
      const ok =
        typeof msg.t === "number" &&
        Array.isArray(msg.q) &&
        typeof msg.alpha === "number" &&
        typeof msg.phase === "string" &&
        Array.isArray(msg.pair_distances) &&
        msg.pair_distances.length === 3 &&
        isPointList(msg.gripper_points, 3) &&
        isPointList(msg.target_points, 3) &&
        isPointList(msg.finger_points, 2) &&
        Array.isArray(msg.region_centers) &&
        isPose(msg.hand) &&
        isPose(msg.object) &&
        typeof msg.running === "boolean";
      if (!ok) throw new SchemaMismatch("state_update with unexpected shape");
      return msg as unknown as StateUpdate;
    }
    default:
      throw new SchemaMismatch(`unknown kind ${String(msg.kind)}`);
  }
}

// ---- client -> server ----

export interface HandPose {
  position: Vec3;
  quat?: Quat; // either quat or rpy, as the widget produced it
  rpy?: Vec3;
}

export function handPoseCmd(seq: number, pose: HandPose): string {
  const body: Record<string, unknown> = {
    v: WIRE_VERSION,
    kind: "hand_pose_cmd",
    seq,
    position: pose.position,
  };
  if (pose.quat) body.quat = pose.quat;
  else body.rpy = pose.rpy ?? [0, 0, 0];
  return JSON.stringify(body);
}

export function profileCmd(seq: number, profile: string): string {
  return JSON.stringify({ v: WIRE_VERSION, kind: "profile_cmd", seq, profile });
}

export function lifecycleCmd(seq: number, action: "start" | "pause" | "reset"): string {
  return JSON.stringify({ v: WIRE_VERSION, kind: "lifecycle_cmd", seq, action });
}
