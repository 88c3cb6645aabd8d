// Draws a DrawList onto a 2D context. Typed against the subset of
// CanvasRenderingContext2D we use, so headless tests can pass a stub.

import type { DrawList } from "./scene.js";

export interface Ctx2D {
  strokeStyle: string | unknown;
  fillStyle: string | unknown;
  lineWidth: number;
  font: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
  setLineDash(segments: number[]): void;
}

export function renderScene(ctx: Ctx2D, dl: DrawList, width: number, height: number): void {
  ctx.clearRect(0, 0, width, height);
  for (const s of dl.segments) {
    ctx.beginPath();
    ctx.setLineDash(s.dash ?? []);
    ctx.strokeStyle = s.color;
    ctx.lineWidth = s.width;
    ctx.moveTo(s.a[0], s.a[1]);
    ctx.lineTo(s.b[0], s.b[1]);
    ctx.stroke();
  }
  ctx.setLineDash([]);
  for (const c of dl.circles) {
    ctx.beginPath();
    ctx.arc(c.c[0], c.c[1], c.r, 0, 2 * Math.PI);
    if (c.fill) {
      ctx.fillStyle = c.color;
      ctx.fill();
    } else {
      ctx.strokeStyle = c.color;
      ctx.lineWidth = 1.5;
      ctx.stroke();
    }
  }
  ctx.font = "12px system-ui, sans-serif";
  for (const l of dl.labels) {
    ctx.fillStyle = l.color;
    ctx.fillText(l.text, l.at[0], l.at[1]);
  }
  for (let i = 0; i < dl.warnings.length; i++) {
    ctx.fillStyle = "#ffb347";
    ctx.fillText(dl.warnings[i], 12, height - 14 * (dl.warnings.length - i));
  }
}
