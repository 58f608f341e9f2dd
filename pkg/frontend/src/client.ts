// HTTP + WebSocket client for the planning service.

import type { GoalPair, SessionState, StepEvent } from "./protocol.js";

export class ServiceClient {
  constructor(readonly baseUrl: string) {}

  private async post<T>(path: string, body?: unknown): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body ?? {}),
    });
    const doc = await res.json();
    if (!res.ok) {
      throw new Error(`${doc.error ?? res.status}: ${doc.detail ?? path}`);
    }
    return doc as T;
  }

  createSession(body: Record<string, unknown>): Promise<SessionState> {
    return this.post("/session", body);
  }

  setGoal(sid: string, pairs: GoalPair[]): Promise<{ ok: boolean; pairs: GoalPair[] }> {
    return this.post(`/session/${sid}/goal`, { pairs });
  }

  step(sid: string): Promise<StepEvent> {
    return this.post(`/session/${sid}/step`);
  }

  run(sid: string): Promise<SessionState> {
    return this.post(`/session/${sid}/run`);
  }

  pause(sid: string): Promise<SessionState> {
    return this.post(`/session/${sid}/pause`);
  }

  reset(sid: string, scene?: Record<string, unknown>): Promise<SessionState> {
    return this.post(`/session/${sid}/reset`, scene ? { scene } : {});
  }

  async frame(sid: string): Promise<SessionState> {
    const res = await fetch(`${this.baseUrl}/session/${sid}/frame`);
    return (await res.json()) as SessionState;
  }

  /** Browser-side event stream; the returned closer tears the socket down. */
  openEvents(sid: string, onEvent: (ev: StepEvent) => void): () => void {
    const wsUrl = this.baseUrl.replace(/^http/, "ws") + `/session/${sid}/events`;
    const sock = new WebSocket(wsUrl);
    sock.onmessage = (msg) => onEvent(JSON.parse(msg.data as string) as StepEvent);
    return () => sock.close();
  }
}
