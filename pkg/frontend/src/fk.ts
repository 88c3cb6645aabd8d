// Forward kinematics over the chain file served at /chain, so the arm
// linkage can be drawn from q alone. Server-reported points stay the
// ground truth for markers; this FK only adds the geometry between them
// and is cross-checked against those points every frame.

import type { Quat, Vec3 } from "./wire.js";

export type Mat3 = number[]; // row-major, length 9

export interface Frame {
  r: Mat3;
  p: Vec3;
}

export interface ChainJoint {
  axis: Vec3;
  xyz: Vec3;
  rpy: Vec3;
  lower: number | null;
  upper: number | null;
}

export interface ChainAttachment {
  name: string;
  body: number; // 0 = base, k = after joint k
  offset: Vec3;
}

export interface ChainSpec {
  name: string;
  base: { xyz: Vec3; rpy: Vec3 };
  joints: ChainJoint[];
  attachments: ChainAttachment[];
}

export const IDENT: Mat3 = [1, 0, 0, 0, 1, 0, 0, 0, 1];

export function matMul(a: Mat3, b: Mat3): Mat3 {
  const out = new Array(9) as Mat3;
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[3 * i + j] =
        a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
    }
  }
  return out;
}

export function matVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
    m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
    m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
  ];
}

/** Extrinsic x-y-z roll/pitch/yaw, i.e. Rz(y) Ry(p) Rx(r). */
export function rpyMat(rpy: Vec3): Mat3 {
  const [r, p, y] = rpy;
  const cr = Math.cos(r), sr = Math.sin(r);
  const cp = Math.cos(p), sp = Math.sin(p);
  const cy = Math.cos(y), sy = Math.sin(y);
  // prettier-ignore
  return [
    cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
    sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
    -sp,     cp * sr,                cp * cr,
  ];
}

/** Rodrigues rotation about a unit axis. */
export function axisAngleMat(axis: Vec3, angle: number): Mat3 {
  const [x, y, z] = axis;
  const c = Math.cos(angle), s = Math.sin(angle), t = 1 - c;
  // prettier-ignore
  return [
    t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
    t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
    t * x * z - s * y, t * y * z + s * x, t * z * z + c,
  ];
}

export function quatToMat(q: Quat): Mat3 {
  const [x, y, z, w] = q;
  // prettier-ignore
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
    2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
    2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y),
  ];
}

export function quatMul(a: Quat, b: Quat): Quat {
  const [ax, ay, az, aw] = a;
  const [bx, by, bz, bw] = b;
  return [
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
    aw * bw - ax * bx - ay * by - az * bz,
  ];
}

export function axisAngleQuat(axis: Vec3, angle: number): Quat {
  const h = angle / 2;
  const s = Math.sin(h);
  return [axis[0] * s, axis[1] * s, axis[2] * s, Math.cos(h)];
}

function asVec3(v: unknown, what: string): Vec3 {
  if (!Array.isArray(v) || v.length !== 3 || v.some((x) => typeof x !== "number")) {
    throw new Error(`${what}: expected [x, y, z]`);
  }
  return [v[0], v[1], v[2]];
}

export function parseChain(raw: unknown): ChainSpec {
  if (typeof raw !== "object" || raw === null) throw new Error("chain: not an object");
  const c = raw as Record<string, unknown>;
  if (!Array.isArray(c.joints) || c.joints.length === 0) throw new Error("chain: no joints");
  const base = (c.base ?? { xyz: [0, 0, 0], rpy: [0, 0, 0] }) as Record<string, unknown>;
  const joints: ChainJoint[] = c.joints.map((j: Record<string, unknown>, i: number) => {
    const origin = (j.origin ?? {}) as Record<string, unknown>;
    const axis = asVec3(j.axis, `joint ${i} axis`);
    const n = Math.hypot(axis[0], axis[1], axis[2]);
    if (n === 0) throw new Error(`joint ${i}: zero axis`);
    const limits = (j.limits ?? null) as Record<string, unknown> | null;
    return {
      axis: [axis[0] / n, axis[1] / n, axis[2] / n],
      xyz: asVec3(origin.xyz ?? [0, 0, 0], `joint ${i} xyz`),
      rpy: asVec3(origin.rpy ?? [0, 0, 0], `joint ${i} rpy`),
      lower: limits ? (limits.lower as number) : null,
      upper: limits ? (limits.upper as number) : null,
    };
  });
  const attachments: ChainAttachment[] = (Array.isArray(c.attachments) ? c.attachments : []).map(
    (a: Record<string, unknown>, i: number) => {
      if (typeof a.name !== "string" || typeof a.body !== "number") {
        throw new Error(`attachment ${i}: needs name and body`);
      }
      if (a.body < 0 || a.body > joints.length) {
        throw new Error(`attachment ${a.name}: body ${a.body} out of range`);
      }
      return { name: a.name, body: a.body, offset: asVec3(a.offset, `attachment ${a.name}`) };
    },
  );
  return {
    name: typeof c.name === "string" ? c.name : "chain",
    base: { xyz: asVec3(base.xyz ?? [0, 0, 0], "base xyz"), rpy: asVec3(base.rpy ?? [0, 0, 0], "base rpy") },
    joints,
    attachments,
  };
}

/** Body frames [base, after joint 1, ..., after joint n]. */
export function forwardKinematics(chain: ChainSpec, q: number[]): Frame[] {
  if (q.length !== chain.joints.length) {
    throw new Error(`q has ${q.length} joints, chain has ${chain.joints.length}`);
  }
  const frames: Frame[] = [{ r: rpyMat(chain.base.rpy), p: [...chain.base.xyz] as Vec3 }];
  for (let k = 0; k < chain.joints.length; k++) {
    const j = chain.joints[k];
    const prev = frames[k];
    const rFixed = matMul(prev.r, rpyMat(j.rpy));
    const p = matVec(prev.r, j.xyz);
    frames.push({
      r: matMul(rFixed, axisAngleMat(j.axis, q[k])),
      p: [prev.p[0] + p[0], prev.p[1] + p[1], prev.p[2] + p[2]],
    });
  }
  return frames;
}

export function attachmentPoint(frames: Frame[], att: ChainAttachment): Vec3 {
  const f = frames[att.body];
  const o = matVec(f.r, att.offset);
  return [f.p[0] + o[0], f.p[1] + o[1], f.p[2] + o[2]];
}

export function attachmentPoints(chain: ChainSpec, frames: Frame[]): Record<string, Vec3> {
  const out: Record<string, Vec3> = {};
  for (const att of chain.attachments) out[att.name] = attachmentPoint(frames, att);
  return out;
}
