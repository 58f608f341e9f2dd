// Goal authoring state machine: odd clicks set designated pixels (red),
// even clicks set the matching goal (green outline). Escape clears the
// half-finished pair; submit ships the completed pairs.

import type { GoalPair } from "./protocol.js";

export interface AuthoringState {
  completed: GoalPair[];
  pendingDesignated: [number, number] | null;
}

export function emptyAuthoring(): AuthoringState {
  return { completed: [], pendingDesignated: null };
}

export function clickPixel(state: AuthoringState, pixel: [number, number],
                           gridW: number, gridH: number): AuthoringState {
  const [x, y] = pixel;
  if (x < 0 || y < 0 || x >= gridW || y >= gridH) return state;
  if (state.pendingDesignated === null) {
    return { completed: state.completed, pendingDesignated: [x, y] };
  }
  const pair: GoalPair = [state.pendingDesignated, [x, y]];
  return { completed: [...state.completed, pair], pendingDesignated: null };
}

/** Escape: drop the half-authored pair (completed pairs stay). */
export function cancelPending(state: AuthoringState): AuthoringState {
  return { completed: state.completed, pendingDesignated: null };
}

export function clearAll(): AuthoringState {
  return emptyAuthoring();
}

/** Pairs ready to send, or null when nothing is complete. */
export function submittable(state: AuthoringState): GoalPair[] | null {
  return state.completed.length > 0 ? state.completed : null;
}
