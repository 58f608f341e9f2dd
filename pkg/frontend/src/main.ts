// App wiring: session lifecycle, click-to-author goals, live event stream,
// run/pause/step/reset controls.

import { clickPixel, cancelPending, clearAll, emptyAuthoring, submittable,
         AuthoringState } from "./authoring.js";
import { ServiceClient } from "./client.js";
import { applyEvent, emptyLog, pixelTrails, EventLog } from "./events.js";
import { canvasToGrid, makeView, ViewTransform } from "./mapping.js";
import type { FramePayload, GoalPair, SessionState, StepEvent } from "./protocol.js";
import { drawFrame, drawHeatmap, drawMarkers, drawTrails } from "./render.js";

const $ = (id: string) => document.getElementById(id)!;

class App {
  client = new ServiceClient(location.origin.startsWith("http")
    ? `http://${location.hostname}:8642` : "http://127.0.0.1:8642");
  canvas = $("view") as HTMLCanvasElement;
  ctx = this.canvas.getContext("2d")!;
  session: SessionState | null = null;
  view: ViewTransform = makeView(32, 32, 12);
  authoring: AuthoringState = emptyAuthoring();
  log: EventLog = emptyLog();
  lastFrame: FramePayload | null = null;
  lastEvent: StepEvent | null = null;
  closeEvents: (() => void) | null = null;
  toggles = { heatmap: true, trails: true };

  async start() {
    const seed = parseInt(($("seed") as HTMLInputElement).value || "0", 10);
    const objects = parseInt(($("objects") as HTMLInputElement).value || "1", 10);
    this.session = await this.client.createSession({
      scene: { grid: 32, seed, objects }, seed,
      steps: parseInt(($("steps") as HTMLInputElement).value || "15", 10),
    });
    this.view = makeView(this.session.grid[0], this.session.grid[1],
                         parseInt(($("zoom") as HTMLSelectElement).value, 10));
    this.canvas.width = this.view.gridW * this.view.zoom;
    this.canvas.height = this.view.gridH * this.view.zoom;
    this.lastFrame = this.session.frame ?? null;
    this.authoring = emptyAuthoring();
    this.log = emptyLog();
    this.lastEvent = null;
    this.closeEvents?.();
    this.closeEvents = this.client.openEvents(this.session.session,
                                              (ev) => this.onEvent(ev));
    this.redraw();
    this.status(`session ${this.session.session} ready; click designated (red) then goal (green)`);
  }

  onEvent(ev: StepEvent) {
    this.log = applyEvent(this.log, ev);
    this.lastEvent = ev;
    this.lastFrame = ev.frame;
    this.redraw();
    this.status(`step ${ev.step}/${this.session?.steps_limit}  `
      + `objective ${ev.objective.toFixed(2)}  action (${ev.action[0].toFixed(1)}, `
      + `${ev.action[1].toFixed(1)})`);
  }

  onClick(evt: MouseEvent) {
    if (!this.session) return;
    const rect = this.canvas.getBoundingClientRect();
    const pixel = canvasToGrid(this.view, evt.clientX - rect.left, evt.clientY - rect.top);
    if (!pixel) return;
    this.authoring = clickPixel(this.authoring, pixel, this.view.gridW, this.view.gridH);
    this.redraw();
  }

  async submitGoal() {
    const pairs = submittable(this.authoring);
    if (!this.session || !pairs) return;
    const ack = await this.client.setGoal(this.session.session, pairs);
    this.status(`goal set: ${JSON.stringify(ack.pairs)}`);
  }

  redraw() {
    if (!this.lastFrame) return;
    this.ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    drawFrame(this.ctx, this.view, this.lastFrame);
    if (this.toggles.heatmap && this.lastEvent) {
      for (const heat of this.lastEvent.heatmaps) {
        drawHeatmap(this.ctx, this.view, heat);
      }
    }
    if (this.toggles.trails) drawTrails(this.ctx, this.view, pixelTrails(this.log));
    const shown: GoalPair[] = this.lastEvent?.goal ?? this.authoring.completed;
    drawMarkers(this.ctx, this.view, [...shown, ...this.authoring.completed],
                this.authoring.pendingDesignated);
  }

  status(text: string) {
    $("status").textContent = text;
  }
}

const app = new App();
$("new-session").addEventListener("click", () => void app.start());
$("submit-goal").addEventListener("click", () => void app.submitGoal());
$("clear-goal").addEventListener("click", () => { app.authoring = clearAll(); app.redraw(); });
$("step").addEventListener("click", () => {
  if (app.session) void app.client.step(app.session.session).catch((e) => app.status(String(e)));
});
$("run").addEventListener("click", () => {
  if (app.session) void app.client.run(app.session.session).catch((e) => app.status(String(e)));
});
$("pause").addEventListener("click", () => {
  if (app.session) void app.client.pause(app.session.session);
});
$("reset").addEventListener("click", () => {
  if (app.session) {
    void app.client.reset(app.session.session).then(() => app.start());
  }
});
($("heatmap-toggle") as HTMLInputElement).addEventListener("change", (e) => {
  app.toggles.heatmap = (e.target as HTMLInputElement).checked;
  app.redraw();
});
($("trails-toggle") as HTMLInputElement).addEventListener("change", (e) => {
  app.toggles.trails = (e.target as HTMLInputElement).checked;
  app.redraw();
});
app.canvas.addEventListener("click", (e) => app.onClick(e));
window.addEventListener("keydown", (e) => {
  if (e.key === "Escape") {
    app.authoring = cancelPending(app.authoring);
    app.redraw();
  }
});
