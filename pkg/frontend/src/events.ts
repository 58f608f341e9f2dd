// Ordered application of the server's step-event stream. Events must arrive
// with strictly increasing indices; anything else is dropped with a console
// warning (defensive: the server never reorders).

import type { StepEvent } from "./protocol.js";

export interface EventLog {
  events: StepEvent[];
  lastIndex: number;
  dropped: number;
}

export function emptyLog(): EventLog {
  return { events: [], lastIndex: 0, dropped: 0 };
}

export function applyEvent(log: EventLog, event: StepEvent): EventLog {
  if (event.step <= log.lastIndex) {
    console.warn(`dropping out-of-order event ${event.step} (last ${log.lastIndex})`);
    return { ...log, dropped: log.dropped + 1 };
  }
  return {
    events: [...log.events, event],
    lastIndex: event.step,
    dropped: log.dropped,
  };
}

export function resetLog(): EventLog {
  return emptyLog();
}

/** Tracked-pixel trail per goal pair, for the canvas overlay. */
export function pixelTrails(log: EventLog): [number, number][][] {
  if (log.events.length === 0) return [];
  const n = log.events[0].pixels.length;
  const trails: [number, number][][] = Array.from({ length: n }, () => []);
  for (const ev of log.events) {
    ev.pixels.forEach((p, i) => {
      if (i < trails.length) trails[i].push([p[0], p[1]]);
    });
  }
  return trails;
}
