import { test } from "node:test";
import assert from "node:assert/strict";

import { applyEvent, emptyLog, pixelTrails } from "../src/events.js";
import { heatmapTotal, decodeGrid } from "../src/protocol.js";
import type { StepEvent, FramePayload } from "../src/protocol.js";

function fakeEvent(step: number, pixels: [number, number][] = [[1, 1]]): StepEvent {
  const frame: FramePayload = { width: 8, height: 8,
                                data: Buffer.from(new Uint8Array(64)).toString("base64") };
  return { type: "step", step, action: [0, 0], objective: -1, pixels,
           pusher: [0, 0], goal: [[[1, 1], [2, 2]]], frame, heatmaps: [] };
}

test("in-order events accumulate", () => {
  let log = emptyLog();
  for (let i = 1; i <= 5; i++) log = applyEvent(log, fakeEvent(i));
  assert.equal(log.events.length, 5);
  assert.deepEqual(log.events.map((e) => e.step), [1, 2, 3, 4, 5]);
  assert.equal(log.dropped, 0);
});

test("out-of-order and duplicate events are dropped, not reordered", () => {
  let log = emptyLog();
  log = applyEvent(log, fakeEvent(1));
  log = applyEvent(log, fakeEvent(3));
  log = applyEvent(log, fakeEvent(2));  // stale
  log = applyEvent(log, fakeEvent(3));  // duplicate
  assert.deepEqual(log.events.map((e) => e.step), [1, 3]);
  assert.equal(log.dropped, 2);
});

test("trails follow each pair's tracked pixel", () => {
  let log = emptyLog();
  log = applyEvent(log, fakeEvent(1, [[1, 1], [5, 5]]));
  log = applyEvent(log, fakeEvent(2, [[2, 1], [5, 6]]));
  const trails = pixelTrails(log);
  assert.deepEqual(trails[0], [[1, 1], [2, 1]]);
  assert.deepEqual(trails[1], [[5, 5], [5, 6]]);
});

test("frame decoding maps bytes to [0, 1]", () => {
  const bytes = new Uint8Array([0, 51, 102, 255]);
  const payload: FramePayload = { width: 2, height: 2,
                                  data: Buffer.from(bytes).toString("base64") };
  const v = decodeGrid(payload);
  assert.equal(v[0], 0);
  assert.equal(v[3], 1);
  assert.ok(Math.abs(v[1] - 0.2) < 1e-6);
});

test("heatmap total is the quantized sum", () => {
  const bytes = new Uint8Array(64);
  bytes[10] = 200;
  bytes[11] = 55;
  const payload: FramePayload = { width: 8, height: 8,
                                  data: Buffer.from(bytes).toString("base64") };
  assert.ok(Math.abs(heatmapTotal(payload) - 1.0) < 1e-6);
});
