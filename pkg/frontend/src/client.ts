import { ApiError, ApiErrorBody, CheckpointInfo, SessionInfo, StepResult } from "./types";

/** Thin fetch wrapper around the play-service HTTP API. */
export class PlayClient {
  constructor(private readonly baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!resp.ok) {
      let code = "HTTP_ERROR";
      let message = `${resp.status}`;
      try {
        const body = (await resp.json()) as ApiErrorBody;
        code = body.error.code;
        message = body.error.message;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, code, message);
    }
    return (await resp.json()) as T;
  }

  async listCheckpoints(): Promise<CheckpointInfo[]> {
    const body = await this.request<{ checkpoints: CheckpointInfo[] }>("/checkpoints");
    return body.checkpoints;
  }

  createSession(checkpoint: string, frame?: string): Promise<SessionInfo> {
    return this.request<SessionInfo>("/sessions", {
      method: "POST",
      body: JSON.stringify(frame ? { checkpoint, frame } : { checkpoint }),
    });
  }

  step(sessionId: string, action: number): Promise<StepResult> {
    return this.request<StepResult>(`/sessions/${sessionId}/step`, {
      method: "POST",
      body: JSON.stringify({ action }),
    });
  }

  reset(sessionId: string): Promise<StepResult> {
    return this.request<StepResult>(`/sessions/${sessionId}/reset`, { method: "POST" });
  }

  deleteSession(sessionId: string): Promise<void> {
    return this.request(`/sessions/${sessionId}`, { method: "DELETE" });
  }
}
