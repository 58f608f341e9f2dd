// Canvas drawing: nearest-neighbor frame blit, heatmap alpha overlay,
// designated/goal markers (red filled / green outlined, the usual
// convention) and tracked-pixel trails.

import type { ViewTransform } from "./mapping.js";
import { gridCenter, gridToCanvas } from "./mapping.js";
import type { FramePayload, GoalPair } from "./protocol.js";
import { decodeGrid } from "./protocol.js";

export interface OverlayToggles {
  heatmap: boolean;
  trails: boolean;
  markers: boolean;
}

export function drawFrame(ctx: CanvasRenderingContext2D, view: ViewTransform,
                          frame: FramePayload): void {
  const values = decodeGrid(frame);
  const z = view.zoom;
  for (let y = 0; y < frame.height; y++) {
    for (let x = 0; x < frame.width; x++) {
      const v = Math.round(values[y * frame.width + x] * 255);
      ctx.fillStyle = `rgb(${v},${v},${v})`;
      const [cx, cy] = gridToCanvas(view, x, y);
      ctx.fillRect(cx, cy, z, z);
    }
  }
}

export function drawHeatmap(ctx: CanvasRenderingContext2D, view: ViewTransform,
                            heat: FramePayload): void {
  const values = decodeGrid(heat);
  let peak = 0;
  for (let i = 0; i < values.length; i++) peak = Math.max(peak, values[i]);
  if (peak <= 0) return;
  const z = view.zoom;
  for (let y = 0; y < heat.height; y++) {
    for (let x = 0; x < heat.width; x++) {
      const v = values[y * heat.width + x];
      if (v <= 0) continue;
      ctx.fillStyle = `rgba(64,140,255,${0.65 * v / peak})`;
      const [cx, cy] = gridToCanvas(view, x, y);
      ctx.fillRect(cx, cy, z, z);
    }
  }
}

export function drawMarkers(ctx: CanvasRenderingContext2D, view: ViewTransform,
                            pairs: GoalPair[],
                            pending: [number, number] | null): void {
  const r = Math.max(3, view.zoom * 0.45);
  for (const [d, g] of pairs) {
    const [dx, dy] = gridCenter(view, d[0], d[1]);
    ctx.fillStyle = "rgba(230,40,40,0.95)";
    ctx.beginPath();
    ctx.arc(dx, dy, r, 0, 2 * Math.PI);
    ctx.fill();
    const [gx, gy] = gridCenter(view, g[0], g[1]);
    ctx.strokeStyle = "rgba(40,200,80,0.95)";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(gx, gy, r, 0, 2 * Math.PI);
    ctx.stroke();
  }
  if (pending) {
    const [px, py] = gridCenter(view, pending[0], pending[1]);
    ctx.fillStyle = "rgba(230,40,40,0.5)";
    ctx.beginPath();
    ctx.arc(px, py, r, 0, 2 * Math.PI);
    ctx.fill();
  }
}

export function drawTrails(ctx: CanvasRenderingContext2D, view: ViewTransform,
                           trails: [number, number][][]): void {
  ctx.strokeStyle = "rgba(255,210,60,0.9)";
  ctx.lineWidth = 1.5;
  for (const trail of trails) {
    if (trail.length < 2) continue;
    ctx.beginPath();
    const [x0, y0] = gridCenter(view, trail[0][0], trail[0][1]);
    ctx.moveTo(x0, y0);
    for (let i = 1; i < trail.length; i++) {
      const [x, y] = gridCenter(view, trail[i][0], trail[i][1]);
      ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
}
