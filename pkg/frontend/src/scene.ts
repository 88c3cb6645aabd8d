// Scene construction: turn the latest state_update into a flat draw
// list of screen-space primitives. Pure functions, no DOM; render.ts
// draws the list, main.ts feeds pointer events back through the camera.

import {
  ChainSpec,
  Frame,
  attachmentPoints,
  forwardKinematics,
  matVec,
  quatToMat,
  rpyMat,
} from "./fk.js";
import type { Camera, ViewState } from "./view.js";
import type { StateUpdate, Vec3 } from "./wire.js";

export interface Segment {
  a: [number, number];
  b: [number, number];
  color: string;
  width: number;
  dash?: number[];
}

export interface Circle {
  c: [number, number];
  r: number;
  color: string;
  fill: boolean;
}

export interface Label {
  at: [number, number];
  text: string;
  color: string;
}

export interface DrawList {
  segments: Segment[];
  circles: Circle[];
  labels: Label[];
  badge: { phase: string; running: boolean; faulted: string | null };
  warnings: string[];
}

export interface CameraBasis {
  right: Vec3;
  up: Vec3;
  fwd: Vec3;
}

export function cameraBasis(cam: Camera): CameraBasis {
  // orbit: yaw about world z, pitch = elevation; world z stays up-ish
  const cy = Math.cos(cam.yaw), sy = Math.sin(cam.yaw);
  const cp = Math.cos(cam.pitch), sp = Math.sin(cam.pitch);
  const fwd: Vec3 = [cy * cp, sy * cp, -sp]; // looking direction
  const right: Vec3 = [sy, -cy, 0];          // fwd x world-up, normalized
  const up: Vec3 = [cy * sp, sy * sp, cp];   // right x fwd
  return { right, up, fwd };
}

export function project(cam: Camera, width: number, height: number, p: Vec3): [number, number] {
  const { right, up } = cameraBasis(cam);
  const d: Vec3 = [p[0] - cam.center[0], p[1] - cam.center[1], p[2] - cam.center[2]];
  const x = right[0] * d[0] + right[1] * d[1] + right[2] * d[2];
  const y = up[0] * d[0] + up[1] * d[1] + up[2] * d[2];
  return [width / 2 + cam.zoom * x, height / 2 - cam.zoom * y];
}

/** World displacement for a screen-space drag, in the camera plane. */
export function dragPlaneDelta(cam: Camera, dxPx: number, dyPx: number): Vec3 {
  const { right, up } = cameraBasis(cam);
  const sx = dxPx / cam.zoom;
  const sy = -dyPx / cam.zoom;
  return [
    right[0] * sx + up[0] * sy,
    right[1] * sx + up[1] * sy,
    right[2] * sx + up[2] * sy,
  ];
}

/** Signed screen angle of a point around a center, for the rotation ring. */
export function ringAngle(center: [number, number], at: [number, number]): number {
  return Math.atan2(-(at[1] - center[1]), at[0] - center[0]);
}

export const RING_RADIUS_PX = 58;
export const HAND_HIT_PX = 16;

const COLORS = {
  linkage: "#9aa7b8",
  joint: "#c8d2e0",
  gripper: "#e6c229", // gripper-side paired points
  target: "#d64550",  // object-side target points
  pair: "#8fd0ff",
  finger: "#7fb069",
  region: "#6fb7d9",
  hand: "#f2f2f2",
  object: "#c9a66b",
  force: "#ff9f43",
};

function seg(
  out: Segment[],
  a: [number, number],
  b: [number, number],
  color: string,
  width: number,
  dash?: number[],
): void {
  out.push({ a, b, color, width, dash });
}

export interface SceneOptions {
  width: number;
  height: number;
  sigma: number | null; // repulsive-region radius (m) from /info, if known
}

export function buildScene(
  chain: ChainSpec | null,
  view: ViewState,
  opts: SceneOptions,
): DrawList {
  const dl: DrawList = {
    segments: [],
    circles: [],
    labels: [],
    badge: { phase: "-", running: false, faulted: null },
    warnings: [],
  };
  if (view.schemaError) dl.warnings.push(`wire schema mismatch: ${view.schemaError}`);
  const frame = view.frame;
  if (!frame) return dl;
  dl.badge = { phase: frame.phase, running: frame.running, faulted: frame.faulted };

  const cam = view.camera;
  const pr = (p: Vec3) => project(cam, opts.width, opts.height, p);

  // arm linkage from client-side FK, cross-checked below
  if (chain && frame.q.length === chain.joints.length) {
    const frames = forwardKinematics(chain, frame.q);
    for (let k = 1; k < frames.length; k++) {
      seg(dl.segments, pr(frames[k - 1].p), pr(frames[k].p), COLORS.linkage, 3.5);
      dl.circles.push({ c: pr(frames[k].p), r: 3, color: COLORS.joint, fill: true });
    }
    view.fkWarning = fkDivergence(chain, frames, frame);
    if (view.fkWarning) dl.warnings.push(view.fkWarning);
  }

  // paired points with their connecting springs; the visible gap between
  // target and gripper markers is the approach offset alpha
  for (let i = 0; i < 3; i++) {
    const g = pr(frame.gripper_points[i]);
    const t = pr(frame.target_points[i]);
    seg(dl.segments, g, t, COLORS.pair, 1, [4, 3]);
    dl.circles.push({ c: g, r: 4, color: COLORS.gripper, fill: true });
    dl.circles.push({ c: t, r: 4, color: COLORS.target, fill: false });
    if (view.showForces) {
      // spring pull directions: gripper point toward its target
      seg(dl.segments, g, t, COLORS.force, 2);
    }
  }

  for (const f of frame.finger_points) {
    dl.circles.push({ c: pr(f), r: 3, color: COLORS.finger, fill: true });
  }

  // repulsive regions; radius only if /info told us sigma
  for (const c of frame.region_centers) {
    const at = pr(c);
    dl.circles.push({ c: at, r: 2, color: COLORS.region, fill: true });
    if (opts.sigma !== null) {
      dl.circles.push({ c: at, r: opts.sigma * cam.zoom, color: COLORS.region, fill: false });
    }
  }

  // hand marker with orientation triad and the rotation ring
  const handPx = pr(frame.hand.position);
  const rHand = quatToMat(frame.hand.quat);
  for (const [axis, color] of [
    [[0.05, 0, 0], "#e05555"],
    [[0, 0.05, 0], "#55b060"],
    [[0, 0, 0.05], "#5577e0"],
  ] as [Vec3, string][]) {
    const tip = matVec(rHand, axis);
    seg(dl.segments, handPx, pr([
      frame.hand.position[0] + tip[0],
      frame.hand.position[1] + tip[1],
      frame.hand.position[2] + tip[2],
    ]), color, 2);
  }
  dl.circles.push({ c: handPx, r: 7, color: COLORS.hand, fill: false });
  dl.circles.push({ c: handPx, r: RING_RADIUS_PX, color: "#ffffff44", fill: false });

  const objPx = pr(frame.object.position);
  dl.circles.push({ c: objPx, r: 5, color: COLORS.object, fill: true });
  dl.labels.push({ at: [objPx[0] + 8, objPx[1] - 8], text: "object", color: COLORS.object });
  dl.labels.push({
    at: [handPx[0] + 8, handPx[1] - 10],
    text: `hand  α=${frame.alpha.toFixed(3)} m`,
    color: COLORS.hand,
  });

  return dl;
}

/**
 * Compare client FK against the server's finger points. Those are plain
 * attachment positions; the paired gripper_points are lever-arm extended
 * and cannot be recomputed from the chain document alone.
 */
function fkDivergence(chain: ChainSpec, frames: Frame[], frame: StateUpdate): string | null {
  const pts = attachmentPoints(chain, frames);
  const fingers = ["left_finger", "right_finger"];
  let worst = 0;
  for (let i = 0; i < 2; i++) {
    const mine = pts[fingers[i]];
    if (!mine) return null; // differently named chain; skip the check
    const srv = frame.finger_points[i];
    worst = Math.max(worst, Math.hypot(mine[0] - srv[0], mine[1] - srv[1], mine[2] - srv[2]));
  }
  if (worst > 0.001) {
    return `client FK diverges from server points by ${(worst * 1000).toFixed(2)} mm`;
  }
  return null;
}

/** Home-pose helper for tests: project FK attachment points directly. */
export function projectedAttachments(
  chain: ChainSpec,
  q: number[],
  cam: Camera,
  width: number,
  height: number,
): Record<string, [number, number]> {
  const frames = forwardKinematics(chain, q);
  const pts = attachmentPoints(chain, frames);
  const out: Record<string, [number, number]> = {};
  for (const [name, p] of Object.entries(pts)) out[name] = project(cam, width, height, p);
  return out;
}

export { rpyMat };
