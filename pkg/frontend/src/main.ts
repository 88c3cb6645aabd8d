// Browser entry point: wires the socket, the view state, the canvas,
// and the pointer widgets together. Everything stateful lives in
// ViewState; this file is DOM plumbing around it.

import { SocketLike, SteerClient } from "./client.js";
import { ChainSpec, axisAngleQuat, parseChain, quatMul } from "./fk.js";
import { renderScene } from "./render.js";
import {
  HAND_HIT_PX,
  RING_RADIUS_PX,
  buildScene,
  cameraBasis,
  dragPlaneDelta,
  project,
  ringAngle,
} from "./scene.js";
import { ViewState } from "./view.js";
import { Ack, ErrorMsg, Quat, StateUpdate, Vec3, WIRE_VERSION } from "./wire.js";

const params = new URLSearchParams(location.search);
const host = params.get("host") ?? location.hostname ?? "127.0.0.1";
const port = params.get("port") ?? "8765";
const expectedSession = params.get("session");
const httpBase = `http://${host}:${port}`;

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const view = new ViewState();
let chain: ChainSpec | null = null;
let sigma: number | null = null;
let pendingProfileSeq = -1;

const el = (id: string) => document.getElementById(id)!;

function toast(text: string): void {
  view.toast(text, performance.now());
}

// the DOM WebSocket's handler types are stricter than SocketLike; a thin
// adapter keeps the client testable against non-browser sockets
function adaptSocket(raw: WebSocket): SocketLike {
  const s: SocketLike = {
    get readyState() {
      return raw.readyState;
    },
    send: (d) => raw.send(d),
    close: () => raw.close(),
    onopen: null,
    onmessage: null,
    onclose: null,
    onerror: null,
  };
  raw.onopen = () => s.onopen?.();
  raw.onmessage = (ev) => s.onmessage?.({ data: ev.data });
  raw.onclose = () => s.onclose?.();
  raw.onerror = (ev) => s.onerror?.(ev);
  return s;
}

const client = new SteerClient(adaptSocket(new WebSocket(`ws://${host}:${port}/session`)), {
  onOpen: () => {
    view.connection = "connected";
  },
  onClose: () => {
    view.connection = "closed";
    view.role = null;
  },
  onFrame: (msg: StateUpdate) => view.applyFrame(msg, performance.now()),
  onAck: (msg: Ack) => {
    if (msg.applied === "connect") {
      view.role = msg.role === "steering" ? "steering" : "observer";
      view.sessionId = msg.session_id;
      if (expectedSession && msg.session_id !== expectedSession) {
        view.schemaError = `session ${msg.session_id}, expected ${expectedSession}`;
      }
    } else if (msg.applied === "profile") {
      view.profilePending = null;
      pendingProfileSeq = -1;
      toast(`profile ${String(msg.profile)} (spring2 f_max ${String(msg.spring2_f_max)} N)`);
    } else if (msg.applied === "reset") {
      toast(msg.noop ? "already pristine" : "session reset");
    }
  },
  onError: (msg: ErrorMsg) => {
    if (msg.client_seq !== undefined && msg.client_seq === pendingProfileSeq) {
      view.profilePending = null;
      pendingProfileSeq = -1;
    }
    toast(`${msg.code}: ${msg.detail}`);
  },
  onSchemaMismatch: (detail) => {
    view.schemaError = detail;
  },
  onNotice: toast,
});

async function fetchDocs(): Promise<void> {
  try {
    const info = await (await fetch(`${httpBase}/info`)).json();
    if (info.wire_version !== WIRE_VERSION) {
      view.schemaError = `server wire version ${info.wire_version}, client speaks ${WIRE_VERSION}`;
      return;
    }
    sigma = typeof info.repulsive_sigma === "number" ? info.repulsive_sigma : null;
    el("objname").textContent = String(info.object ?? "?");
    chain = parseChain(await (await fetch(`${httpBase}/chain`)).json());
  } catch (e) {
    toast(`failed to load /info or /chain: ${String(e)}`);
  }
}
void fetchDocs();

// ---- pointer widgets ----

function handPx(): [number, number] | null {
  if (!view.frame) return null;
  return project(view.camera, canvas.width, canvas.height, view.frame.hand.position);
}

canvas.addEventListener("pointerdown", (ev) => {
  canvas.setPointerCapture(ev.pointerId);
  const at: [number, number] = [ev.offsetX, ev.offsetY];
  const h = handPx();
  const canSteer = view.role === "steering" && view.frame !== null;
  let mode: "translate" | "rotate" | "orbit" = "orbit";
  if (canSteer && h) {
    const d = Math.hypot(at[0] - h[0], at[1] - h[1]);
    if (d <= HAND_HIT_PX) mode = "translate";
    else if (Math.abs(d - RING_RADIUS_PX) <= 10) mode = "rotate";
  }
  view.drag = {
    mode,
    startPx: at,
    lastPx: at,
    handPos0: view.frame ? ([...view.frame.hand.position] as Vec3) : [0, 0, 0],
    handQuat0: view.frame ? ([...view.frame.hand.quat] as Quat) : [0, 0, 0, 1],
    ringAngle0: h ? ringAngle(h, at) : 0,
  };
});

function dragPose(ev: PointerEvent): { position: Vec3; quat: Quat } | null {
  const drag = view.drag;
  if (!drag || !view.frame) return null;
  if (drag.mode === "translate") {
    const dx = ev.offsetX - drag.startPx[0];
    const dy = ev.offsetY - drag.startPx[1];
    const w = dragPlaneDelta(view.camera, dx, dy);
    return {
      position: [
        drag.handPos0[0] + w[0],
        drag.handPos0[1] + w[1],
        drag.handPos0[2] + w[2],
      ],
      quat: drag.handQuat0,
    };
  }
  if (drag.mode === "rotate") {
    const h = handPx();
    if (!h) return null;
    const a = ringAngle(h, [ev.offsetX, ev.offsetY]) - drag.ringAngle0;
    // ring turns the hand about the camera's forward axis
    const fwd = cameraBasis(view.camera).fwd;
    return { position: drag.handPos0, quat: quatMul(axisAngleQuat(fwd, a), drag.handQuat0) };
  }
  return null;
}

canvas.addEventListener("pointermove", (ev) => {
  const drag = view.drag;
  if (!drag) return;
  if (drag.mode === "orbit") {
    view.camera.yaw -= (ev.offsetX - drag.lastPx[0]) * 0.008;
    view.camera.pitch = Math.min(
      1.4,
      Math.max(-1.4, view.camera.pitch + (ev.offsetY - drag.lastPx[1]) * 0.008),
    );
    drag.lastPx = [ev.offsetX, ev.offsetY];
    return;
  }
  const pose = dragPose(ev);
  if (pose) client.handPose(pose);
  drag.lastPx = [ev.offsetX, ev.offsetY];
});

canvas.addEventListener("pointerup", (ev) => {
  const drag = view.drag;
  view.drag = null;
  if (!drag || drag.mode === "orbit") return;
  const pose = dragPose(ev);
  if (pose) client.handPoseFinal(pose); // exact final pose, unthrottled
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  const f = Math.exp(-ev.deltaY * 0.001);
  view.camera.zoom = Math.min(2500, Math.max(60, view.camera.zoom * f));
});

// ---- controls ----

el("start").onclick = () => client.lifecycle("start");
el("pause").onclick = () => client.lifecycle("pause");
el("reset").onclick = () => client.lifecycle("reset");
el("forces").onclick = () => {
  view.showForces = !view.showForces;
  el("forces").classList.toggle("on", view.showForces);
};

for (const name of ["authoritative", "cooperative"]) {
  el(`profile-${name}`).onclick = () => {
    if (view.connection !== "connected" || view.role !== "steering") return;
    view.profilePending = name;
    pendingProfileSeq = client.profile(name);
  };
}

// ---- render loop: read the view once per frame, draw, update HUD ----

function hud(): void {
  const f = view.frame;
  el("conn").textContent = view.connection + (view.role ? ` (${view.role})` : "");
  el("conn").className = `pill ${view.connection}`;
  const badge = el("phase");
  badge.textContent = f ? f.phase : "-";
  badge.className = `badge ${f ? f.phase : ""}`;
  el("clock").textContent = f ? `${f.t.toFixed(3)} s  tick ${f.tick}` : "-";
  el("alpha").textContent = f ? `${f.alpha.toFixed(3)} m` : "-";
  el("stream").textContent = f
    ? `seq ${f.seq}  drops ${f.drops}  gaps ${client.seqGaps}`
    : "-";
  // readouts are the server's numbers untouched
  const d = view.readouts();
  el("pairs").textContent = d.length
    ? d.map((x, i) => `d${i + 1} ${(x * 100).toFixed(2)} cm`).join("   ")
    : "-";
  const prof = f ? f.profile.name : "-";
  el("profile-state").textContent = view.profilePending
    ? `${prof} → ${view.profilePending}…`
    : `${prof} (spring2 f_max ${f ? f.profile.spring2_f_max : "-"} N)`;
  for (const name of ["authoritative", "cooperative"]) {
    (el(`profile-${name}`) as HTMLButtonElement).disabled =
      view.connection !== "connected" ||
      view.role !== "steering" ||
      view.profilePending !== null;
  }
  el("fault").textContent = f && f.faulted ? `fault: ${f.faulted}` : "";
  el("banner").textContent = view.schemaError ? `schema mismatch: ${view.schemaError}` : "";
  el("banner").style.display = view.schemaError ? "block" : "none";

  view.pruneToasts(performance.now());
  el("toasts").innerHTML = "";
  for (const t of view.toasts) {
    const div = document.createElement("div");
    div.className = "toast";
    div.textContent = t.text;
    el("toasts").appendChild(div);
  }
}

function frame(): void {
  const rect = canvas.getBoundingClientRect();
  if (canvas.width !== rect.width || canvas.height !== rect.height) {
    canvas.width = rect.width;
    canvas.height = rect.height;
  }
  const dl = buildScene(chain, view, { width: canvas.width, height: canvas.height, sigma });
  renderScene(ctx, dl, canvas.width, canvas.height);
  hud();
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
