// Wire types and codecs for the planning service.

export interface FramePayload {
  width: number;
  height: number;
  data: string; // base64 u8, row-major
}

export type GoalPair = [[number, number], [number, number]];

export interface StepEvent {
  type: "step";
  step: number;
  action: [number, number];
  objective: number;
  pixels: [number, number][];
  pusher: [number, number];
  goal: GoalPair[];
  frame: FramePayload;
  heatmaps: FramePayload[];
}

export interface SessionState {
  session: string;
  mode: "idle" | "running" | "paused";
  step: number;
  steps_limit: number;
  grid: [number, number];
  goal: GoalPair[];
  predictor: string;
  frame?: FramePayload;
}

function b64ToBytes(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return Uint8Array.from(Buffer.from(b64, "base64"));
}

/** Decode a base64 grayscale payload into intensities in [0, 1]. */
export function decodeGrid(payload: FramePayload): Float32Array {
  const bytes = b64ToBytes(payload.data);
  const out = new Float32Array(bytes.length);
  for (let i = 0; i < bytes.length; i++) out[i] = bytes[i] / 255.0;
  return out;
}

/** Sum of a decoded heatmap; quantization preserves a total of exactly 1. */
export function heatmapTotal(payload: FramePayload): number {
  const v = decodeGrid(payload);
  let s = 0;
  for (let i = 0; i < v.length; i++) s += v[i];
  return s;
}

export function goalPairsEqual(a: GoalPair[], b: GoalPair[]): boolean {
  if (a.length !== b.length) return false;
  for (let i = 0; i < a.length; i++) {
    for (let j = 0; j < 2; j++) {
      if (a[i][j][0] !== b[i][j][0] || a[i][j][1] !== b[i][j][1]) return false;
    }
  }
  return true;
}
